use serde::{Deserialize, Serialize};

use crate::corpus::normalize_text;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Intent {
    MakeDrink { name: String },
    ListRecipes,
    /// Anything else; the normalized text is still used as a retrieval query.
    Unknown { text: String },
}

const LIST_PHRASES: &[&str] = &["list recipes", "list drinks", "what can you make", "menu", "show the menu", "recipes"];

const LEADS: &[&str] = &["please", "can you", "could you", "would you", "i want", "i would like", "i d like", "give me"];

/// Recognizes `make (me)? (a|an)? <name>` and a few polite variants.
pub fn parse_order(text: &str) -> Intent {
    let norm = normalize_text(text);
    if LIST_PHRASES.contains(&norm.as_str()) {
        return Intent::ListRecipes;
    }
    let mut words: Vec<&str> = norm.split(' ').filter(|w| !w.is_empty()).collect();
    let mut stripped = true;
    while stripped {
        stripped = false;
        for lead in LEADS {
            let lead: Vec<&str> = lead.split(' ').collect();
            if words.len() > lead.len() && words[..lead.len()] == lead[..] {
                words.drain(..lead.len());
                stripped = true;
            }
        }
    }
    if words.last() == Some(&"please") && words.len() > 1 {
        words.pop();
    }
    let rest = match words.first() {
        Some(&"make") | Some(&"mix") | Some(&"pour") => &words[1..],
        _ => return Intent::Unknown { text: norm },
    };
    let rest = match rest.first() {
        Some(&"me") => &rest[1..],
        _ => rest,
    };
    let rest = match rest.first() {
        Some(&"a") | Some(&"an") | Some(&"one") => &rest[1..],
        _ => rest,
    };
    if rest.is_empty() {
        return Intent::Unknown { text: norm };
    }
    Intent::MakeDrink { name: rest.join(" ") }
}

impl Intent {
    /// Text handed to retrieval.
    pub fn query(&self) -> Option<&str> {
        match self {
            Intent::MakeDrink { name } => Some(name),
            Intent::Unknown { text } => Some(text),
            Intent::ListRecipes => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drink(name: &str) -> Intent {
        Intent::MakeDrink { name: name.into() }
    }

    #[test]
    fn grammar() {
        assert_eq!(parse_order("Make me a Mojito"), drink("mojito"));
        assert_eq!(parse_order("make a margarita!"), drink("margarita"));
        assert_eq!(parse_order("make an Aperol Spritz"), drink("aperol spritz"));
        assert_eq!(parse_order("MAKE negroni"), drink("negroni"));
        assert_eq!(parse_order("Please make me a gin and tonic, please"), drink("gin and tonic"));
        assert_eq!(parse_order("Could you make me a Cuba Libre?"), drink("cuba libre"));
    }

    #[test]
    fn listing() {
        assert_eq!(parse_order("What can you make?"), Intent::ListRecipes);
        assert_eq!(parse_order("menu"), Intent::ListRecipes);
    }

    #[test]
    fn unknown_keeps_text() {
        assert_eq!(parse_order("Mojito!"), Intent::Unknown { text: "mojito".into() });
        assert_eq!(parse_order("make me a"), Intent::Unknown { text: "make me a".into() });
        assert_eq!(parse_order(""), Intent::Unknown { text: String::new() });
    }
}
