//! Seeded sweep orchestration: the Cartesian product of reward schedules,
//! opponents, games, and seeds, each cell running in an isolated directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::config::{self, KvReader};
use crate::error::{CoreError, Result};
use crate::trainer::{run_cotraining, run_training, GameRef, OpponentKind, RunConfig};

/// A sweep: a base configuration plus axis lists. Every combination of
/// (game, reward, opponent, seed) becomes one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub games: Vec<GameRef>,
    pub rewards: Vec<String>,
    pub opponents: Vec<OpponentKind>,
    pub seeds: Vec<u64>,
    pub out_root: PathBuf,
    /// Whether the spec file pinned `batch_size`; unset lets learner cells
    /// fall back to their own default of 3.
    batch_size_explicit: bool,
}

impl SweepSpec {
    /// Parse a sweep file: the run-config keys plus plural axis keys
    /// `games`, `rewards`, `opponents`, `seeds` (comma-separated lists) and
    /// `out_root`. Axis keys default to the base value; seeds default to
    /// 1..=5.
    pub fn from_str(label: &str, text: &str) -> Result<SweepSpec> {
        let pairs = config::parse_kv(label, text)?;
        let batch_size_explicit = pairs.iter().any(|p| p.key == "batch_size");
        let mut reader = KvReader::new(label, pairs);

        let list = |reader: &mut KvReader<'_>, key: &str| -> Option<(usize, Vec<String>)> {
            reader.take(key).map(|(line, v)| {
                (
                    line,
                    v.split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect(),
                )
            })
        };

        let games_raw = list(&mut reader, "games");
        let rewards_raw = list(&mut reader, "rewards");
        let opponents_raw = list(&mut reader, "opponents");
        let seeds_raw = list(&mut reader, "seeds");
        let out_root = reader
            .take("out_root")
            .map(|(_, v)| PathBuf::from(v))
            .unwrap_or_else(|| PathBuf::from("sweep"));

        let base = config::run_config_from_reader(&mut reader, false)?;
        reader.finish()?;

        let games = match games_raw {
            Some((_, names)) => {
                let mut games = Vec::new();
                for name in names {
                    crate::game::builtin_game(&name)?;
                    games.push(GameRef::Builtin(name));
                }
                games
            }
            None => vec![base.game.clone()],
        };
        let rewards = match rewards_raw {
            Some((line, names)) => {
                for name in &names {
                    if !config::REWARD_NAMES.contains(&name.as_str()) {
                        return Err(CoreError::ConfigParse {
                            path: label.to_string(),
                            line,
                            msg: format!("unknown reward '{name}'"),
                        });
                    }
                }
                names
            }
            None => vec![config::reward_label(&base.schedule)],
        };
        let opponents = match opponents_raw {
            Some((line, names)) => {
                let mut opps = Vec::new();
                for name in &names {
                    opps.push(
                        OpponentKind::parse(name).ok_or_else(|| CoreError::ConfigParse {
                            path: label.to_string(),
                            line,
                            msg: format!("unknown opponent '{name}'"),
                        })?,
                    );
                }
                opps
            }
            None => vec![base.opponent.clone()],
        };
        let seeds = match seeds_raw {
            Some((line, values)) => {
                let mut seeds = Vec::new();
                for v in &values {
                    seeds.push(v.parse().map_err(|_| CoreError::ConfigParse {
                        path: label.to_string(),
                        line,
                        msg: format!("bad seed '{v}'"),
                    })?);
                }
                seeds
            }
            None => vec![1, 2, 3, 4, 5],
        };

        if games.is_empty() || rewards.is_empty() || opponents.is_empty() || seeds.is_empty() {
            return Err(CoreError::InvalidConfig("empty sweep axis".into()));
        }
        Ok(SweepSpec {
            base,
            games,
            rewards,
            opponents,
            seeds,
            out_root,
            batch_size_explicit,
        })
    }

    pub fn load(path: &Path) -> Result<SweepSpec> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::io(format!("reading sweep spec {}", path.display()), e))?;
        SweepSpec::from_str(&path.display().to_string(), &text)
    }

    /// Enumerate every cell in deterministic order. Cell names are injective
    /// over the coordinates.
    pub fn cells(&self) -> Result<Vec<(String, RunConfig)>> {
        let mut cells = Vec::new();
        for game in &self.games {
            for reward in &self.rewards {
                for opponent in &self.opponents {
                    for &seed in &self.seeds {
                        let name = format!(
                            "{}_{}_{}_seed{}",
                            game.label(),
                            reward,
                            opponent.label(),
                            seed
                        );
                        let mut cfg = self.base.clone();
                        cfg.game = game.clone();
                        cfg.opponent = opponent.clone();
                        if !self.batch_size_explicit && *opponent == OpponentKind::Learner {
                            cfg.batch_size = 3;
                        }
                        cfg.seed = seed;
                        cfg.output_dir = self.out_root.join(&name);
                        // Re-derive the schedule from the reward label with
                        // the base parameters and switch point.
                        let switch = match self.base.schedule.segments() {
                            [(0, _), (s, _)] => *s,
                            _ => self.base.episodes / 2,
                        };
                        let switch_line = if reward.contains("_then_") {
                            format!("switch_episode = {switch}\n")
                        } else {
                            String::new()
                        };
                        let rebuilt = config::run_config_from_str(
                            "cell",
                            &format!(
                                "game = IPD\nreward = {reward}\nopponent = tft\nseed = 0\n\
                                 {switch_line}xi = {}\nr_illegal = {}\nepisodes = {}\n",
                                self.base.schedule.params.xi,
                                self.base.schedule.params.r_illegal,
                                self.base.episodes,
                            ),
                        )?;
                        cfg.schedule = rebuilt.schedule;
                        cells.push((name, cfg));
                    }
                }
            }
        }
        Ok(cells)
    }
}

/// One executed cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub name: String,
    pub dir: PathBuf,
    /// Present when the cell failed; failures never abort the sweep.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    pub cells: Vec<CellResult>,
    pub summary_path: PathBuf,
}

impl SweepOutcome {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }
}

fn run_cell(cfg: &RunConfig) -> Result<()> {
    match cfg.opponent {
        OpponentKind::Learner => {
            // A learner cell trains a pair: the partner shares the
            // configuration with a derived seed, under the cell directory.
            let mut cfg_a = cfg.clone();
            cfg_a.output_dir = cfg.output_dir.join("agent_a");
            let mut cfg_b = cfg.clone();
            cfg_b.seed = cfg.seed.wrapping_add(0x5eed);
            cfg_b.output_dir = cfg.output_dir.join("agent_b");
            run_cotraining(&cfg_a, &cfg_b)?;
        }
        _ => {
            run_training(cfg)?;
        }
    }
    Ok(())
}

/// Execute every cell of the sweep with up to `workers` threads. Cells share
/// no state and write to disjoint directories; failed cells are recorded in
/// the outcome and in `sweep_summary.csv`.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<SweepOutcome> {
    let cells = spec.cells()?;
    std::fs::create_dir_all(&spec.out_root)
        .map_err(|e| CoreError::io(format!("creating {}", spec.out_root.display()), e))?;

    let results: Arc<Mutex<Vec<Option<CellResult>>>> =
        Arc::new(Mutex::new(vec![None; cells.len()]));
    let queue: Arc<Mutex<std::collections::VecDeque<(usize, String, RunConfig)>>> =
        Arc::new(Mutex::new(
            cells
                .into_iter()
                .enumerate()
                .map(|(i, (name, cfg))| (i, name, cfg))
                .collect(),
        ));

    let worker_count = workers.max(1);
    std::thread::scope(|scope| {
        for _ in 0..worker_count {
            let queue = Arc::clone(&queue);
            let results = Arc::clone(&results);
            scope.spawn(move || loop {
                let job = queue.lock().unwrap().pop_front();
                let Some((idx, name, cfg)) = job else { break };
                let error = run_cell(&cfg).err().map(|e| e.to_string());
                let cell = CellResult {
                    name,
                    dir: cfg.output_dir.clone(),
                    error,
                };
                results.lock().unwrap()[idx] = Some(cell);
            });
        }
    });

    let cells: Vec<CellResult> = Arc::try_unwrap(results)
        .expect("workers joined")
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|c| c.expect("every cell ran"))
        .collect();

    let mut summary = String::from("cell,dir,status,error\n");
    for c in &cells {
        let _ = writeln!(
            summary,
            "{},{},{},{}",
            c.name,
            c.dir.display(),
            if c.error.is_some() { "failed" } else { "ok" },
            c.error.as_deref().unwrap_or("").replace(',', ";"),
        );
    }
    let summary_path = spec.out_root.join("sweep_summary.csv");
    std::fs::write(&summary_path, summary)
        .map_err(|e| CoreError::io(format!("writing {}", summary_path.display()), e))?;

    Ok(SweepOutcome {
        cells,
        summary_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use tempfile::TempDir;

    fn spec_text(root: &Path, extra: &str) -> String {
        format!(
            "game = IPD\nreward = game\nopponent = tft\nepisodes = 4\nbatch_size = 2\n\
             out_root = {}\n{extra}",
            root.display()
        )
    }

    #[test]
    fn product_enumerates_twenty_cells() {
        let tmp = TempDir::new().unwrap();
        let spec = SweepSpec::from_str(
            "test",
            &spec_text(
                tmp.path(),
                "rewards = game, deontological, utilitarian, game_deontological\n\
                 seeds = 1,2,3,4,5\n",
            ),
        )
        .unwrap();
        let cells = spec.cells().unwrap();
        assert_eq!(cells.len(), 20);
        let names: HashSet<&String> = cells.iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 20, "cell names must be injective");

        let outcome = run_sweep(&spec, 4).unwrap();
        assert_eq!(outcome.failed(), 0);
        for cell in &outcome.cells {
            assert!(cell.dir.join("trajectory.csv").exists(), "{:?}", cell.dir);
        }
    }

    #[test]
    fn rerunning_a_sweep_is_byte_identical() {
        let tmp = TempDir::new().unwrap();
        let spec = SweepSpec::from_str("test", &spec_text(tmp.path(), "seeds = 1,2\n")).unwrap();
        run_sweep(&spec, 2).unwrap();
        let read_all = || -> Vec<String> {
            spec.cells()
                .unwrap()
                .iter()
                .map(|(_, cfg)| {
                    std::fs::read_to_string(cfg.output_dir.join("trajectory.csv")).unwrap()
                })
                .collect()
        };
        let first = read_all();
        run_sweep(&spec, 1).unwrap();
        assert_eq!(first, read_all());
    }

    #[test]
    fn failing_cells_are_isolated() {
        let tmp = TempDir::new().unwrap();
        // llm cells cannot train and must fail without poisoning the rest.
        let spec = SweepSpec::from_str(
            "test",
            &spec_text(tmp.path(), "opponents = tft, llm\nseeds = 1\n"),
        )
        .unwrap();
        let outcome = run_sweep(&spec, 2).unwrap();
        assert_eq!(outcome.cells.len(), 2);
        assert_eq!(outcome.failed(), 1);
        let ok = outcome.cells.iter().find(|c| c.error.is_none()).unwrap();
        assert!(ok.dir.join("episode_metrics.csv").exists());
        let summary = std::fs::read_to_string(&outcome.summary_path).unwrap();
        assert!(summary.contains("failed"));
    }

    #[test]
    fn learner_cells_cotrain_a_pair() {
        let tmp = TempDir::new().unwrap();
        let spec = SweepSpec::from_str(
            "test",
            &format!(
                "game = IPD\nreward = game\nopponent = learner\nepisodes = 4\n\
                 seeds = 1\nout_root = {}\n",
                tmp.path().display()
            ),
        )
        .unwrap();
        let cells = spec.cells().unwrap();
        assert_eq!(cells.len(), 1);
        // Without an explicit batch_size, learner cells use 3.
        assert_eq!(cells[0].1.batch_size, 3);
        let outcome = run_sweep(&spec, 1).unwrap();
        assert_eq!(outcome.failed(), 0);
        let cell_dir = &outcome.cells[0].dir;
        assert!(cell_dir.join("agent_a").join("trajectory.csv").exists());
        assert!(cell_dir.join("agent_b").join("trajectory.csv").exists());
    }

    #[test]
    fn default_seed_axis_is_five_seeds() {
        let tmp = TempDir::new().unwrap();
        let spec = SweepSpec::from_str("test", &spec_text(tmp.path(), "")).unwrap();
        assert_eq!(spec.seeds, vec![1, 2, 3, 4, 5]);
    }
}
