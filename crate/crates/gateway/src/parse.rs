//! Strict response classification: a response is legal only when, after
//! trimming surrounding whitespace, it is exactly one of the two legal
//! tokens. Everything else, including a legal token wrapped in prose, is
//! illegal.

use moralsim_core::game::{Action, TokenChoice, TokenVocabulary};

pub fn parse_action(response_text: &str, vocab: &TokenVocabulary) -> TokenChoice {
    let trimmed = response_text.trim();
    if trimmed == vocab.c_legal() {
        TokenChoice::Legal(Action::Cooperate)
    } else if trimmed == vocab.d_legal() {
        TokenChoice::Legal(Action::Defect)
    } else {
        TokenChoice::Illegal(trimmed.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> TokenVocabulary {
        TokenVocabulary::new("action1", "action2", vec![]).unwrap()
    }

    #[test]
    fn trimmed_exact_matches_are_legal() {
        let v = vocab();
        assert_eq!(
            parse_action(" action2\n", &v),
            TokenChoice::Legal(Action::Defect)
        );
        assert_eq!(
            parse_action("action1", &v),
            TokenChoice::Legal(Action::Cooperate)
        );
        assert_eq!(
            parse_action("\taction1 ", &v),
            TokenChoice::Legal(Action::Cooperate)
        );
    }

    #[test]
    fn prose_wrapped_tokens_are_illegal() {
        let v = vocab();
        assert_eq!(
            parse_action("I choose action1", &v),
            TokenChoice::Illegal("I choose action1".into())
        );
        assert_eq!(
            parse_action("action1 action2", &v),
            TokenChoice::Illegal("action1 action2".into())
        );
    }

    #[test]
    fn empty_responses_are_illegal() {
        let v = vocab();
        assert_eq!(parse_action("", &v), TokenChoice::Illegal(String::new()));
        assert_eq!(
            parse_action("  \n", &v),
            TokenChoice::Illegal(String::new())
        );
    }

    #[test]
    fn swapped_vocabulary_reverses_the_meaning() {
        let swapped = TokenVocabulary::new("action2", "action1", vec![]).unwrap();
        assert_eq!(
            parse_action("action2", &swapped),
            TokenChoice::Legal(Action::Cooperate)
        );
        assert_eq!(
            parse_action("action1", &swapped),
            TokenChoice::Legal(Action::Defect)
        );
    }

    #[test]
    fn legal_tokens_always_parse_legal() {
        for (c, d) in [("action1", "action2"), ("xx", "yy"), ("0", "1")] {
            let v = TokenVocabulary::new(c, d, vec![]).unwrap();
            assert_eq!(parse_action(c, &v), TokenChoice::Legal(Action::Cooperate));
            assert_eq!(parse_action(d, &v), TokenChoice::Legal(Action::Defect));
        }
    }
}
