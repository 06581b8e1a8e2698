use std::fs::File;
use std::io::Read;
use std::path::Path;

/// Up to `max_chars` characters from the start of a text file. Reads at most
/// four bytes per character, never the whole file. A multi-byte sequence
/// cut by the read limit is dropped; invalid bytes elsewhere become U+FFFD.
pub fn read_excerpt(path: &Path, max_chars: usize) -> std::io::Result<String> {
    let mut buf = Vec::new();
    File::open(path)?
        .take(max_chars.saturating_mul(4) as u64)
        .read_to_end(&mut buf)?;
    Ok(excerpt_of(&buf, max_chars))
}

pub(crate) fn excerpt_of(bytes: &[u8], max_chars: usize) -> String {
    let valid = match std::str::from_utf8(bytes) {
        Err(e) if e.error_len().is_none() => &bytes[..e.valid_up_to()],
        _ => bytes,
    };
    String::from_utf8_lossy(valid).chars().take(max_chars).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuts_on_character_boundaries() {
        assert_eq!(excerpt_of("Straße".as_bytes(), 5), "Straß");
        assert_eq!(excerpt_of("Grüße".as_bytes(), 0), "");
        // "ü" is two bytes; a read that stops after the first is trimmed.
        assert_eq!(excerpt_of(&"Grü".as_bytes()[..3], 10), "Gr");
        assert_eq!(excerpt_of(b"ab\xffcd", 10), "ab\u{fffd}cd");
    }

    #[test]
    fn reads_only_a_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.txt");
        std::fs::write(&p, "ä".repeat(10_000)).unwrap();
        assert_eq!(read_excerpt(&p, 7).unwrap(), "ä".repeat(7));
    }
}
