//! Identifier rules shared by topics, sections, services and schemas.

/// Topic names: `[a-z0-9-]{1,64}`.
pub fn is_topic_name(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 64
        && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

/// General identifiers (service ids, section ids, schema and field names):
/// `[A-Za-z0-9._-]{1,128}`, not starting with a dot.
pub fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 128
        && !s.starts_with('.')
        && s.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topic_names() {
        assert!(is_topic_name("gps-raw"));
        assert!(is_topic_name("a"));
        assert!(!is_topic_name(""));
        assert!(!is_topic_name("Alerts"));
        assert!(!is_topic_name("a_b"));
        assert!(is_topic_name(&"x".repeat(64)));
        assert!(!is_topic_name(&"x".repeat(65)));
    }

    #[test]
    fn identifiers() {
        assert!(is_identifier("mindtick-sink"));
        assert!(is_identifier("QuestionnaireResponse"));
        assert!(!is_identifier(".hidden"));
        assert!(!is_identifier("a b"));
        assert!(!is_identifier("a/b"));
    }
}
