/// Canonical form used for every label and query comparison: lowercase,
/// punctuation dropped, runs of Unicode whitespace collapsed to one space,
/// no leading or trailing space.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for ch in raw.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if !ch.is_alphanumeric() {
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.extend(ch.to_lowercase());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapses_and_strips() {
        assert_eq!(normalize_text("  Lime   JUICE! "), "lime juice");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("Mojito"), "mojito");
    }

    #[test]
    fn unicode_whitespace_and_letters() {
        assert_eq!(normalize_text("Водка\u{00A0}\tСтоличная"), "водка столичная");
        assert_eq!(normalize_text("Piña-Colada"), "piñacolada");
        assert_eq!(normalize_text(" !!! "), "");
        assert_eq!(normalize_text("a , b"), "a b");
    }

    #[test]
    fn idempotent() {
        for s in ["  Lime   JUICE! ", "Gin & Tonic", "x\u{2003}y"] {
            let once = normalize_text(s);
            assert_eq!(normalize_text(&once), once);
        }
    }
}
