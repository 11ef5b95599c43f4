//! Command-line quantities with unit suffixes.

/// Duration in microseconds. Accepts `us`, `µs`, `ms` and `s` suffixes; a
/// bare number is microseconds.
pub fn parse_duration_us(text: &str) -> Result<f64, String> {
    let t = text.trim();
    let (number, scale) = if let Some(n) = t.strip_suffix("us").or_else(|| t.strip_suffix("µs")) {
        (n, 1.0)
    } else if let Some(n) = t.strip_suffix("ms") {
        (n, 1e3)
    } else if let Some(n) = t.strip_suffix('s') {
        (n, 1e6)
    } else {
        (t, 1.0)
    };
    let value: f64 = number
        .trim()
        .parse()
        .map_err(|_| format!("invalid duration {text:?}"))?;
    if !(value > 0.0) || !value.is_finite() {
        return Err(format!("duration must be positive: {text:?}"));
    }
    Ok(value * scale)
}

/// Size in bytes. Accepts `B`, decimal `KB`/`MB`/`GB` and binary
/// `KiB`/`MiB`/`GiB` suffixes; a bare integer is bytes.
pub fn parse_bytes(text: &str) -> Result<u64, String> {
    const UNITS: [(&str, f64); 7] = [
        ("KiB", 1024.0),
        ("MiB", 1048576.0),
        ("GiB", 1073741824.0),
        ("KB", 1e3),
        ("MB", 1e6),
        ("GB", 1e9),
        ("B", 1.0),
    ];
    let t = text.trim();
    if let Ok(v) = t.parse::<u64>() {
        return positive(v, text);
    }
    for (suffix, scale) in UNITS {
        if let Some(n) = t.strip_suffix(suffix) {
            let value: f64 = n.trim().parse().map_err(|_| format!("invalid size {text:?}"))?;
            if !(value >= 0.0) || !value.is_finite() {
                return Err(format!("invalid size {text:?}"));
            }
            return positive((value * scale).round() as u64, text);
        }
    }
    Err(format!("invalid size {text:?}"))
}

fn positive(v: u64, text: &str) -> Result<u64, String> {
    if v == 0 {
        Err(format!("size must be positive: {text:?}"))
    } else {
        Ok(v)
    }
}

/// Inclusive seed range `a..b`, or a single seed.
pub fn parse_seed_range(text: &str) -> Result<(u64, u64), String> {
    let bad = || format!("invalid seed range {text:?}, expected a..b");
    match text.split_once("..") {
        Some((a, b)) => {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            Ok((a, b))
        }
        None => {
            let a = text.trim().parse().map_err(|_| bad())?;
            Ok((a, a))
        }
    }
}

/// Comma-separated descendant indices.
pub fn parse_selection(text: &str) -> Result<Vec<usize>, String> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| format!("invalid selection {text:?}, expected e.g. 0,2,1"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations() {
        assert_eq!(parse_duration_us("250"), Ok(250.0));
        assert_eq!(parse_duration_us("80us"), Ok(80.0));
        assert_eq!(parse_duration_us("80µs"), Ok(80.0));
        assert_eq!(parse_duration_us("100ms"), Ok(100_000.0));
        assert_eq!(parse_duration_us("2s"), Ok(2_000_000.0));
        assert_eq!(parse_duration_us("1.5 ms"), Ok(1500.0));
        assert!(parse_duration_us("0ms").is_err());
        assert!(parse_duration_us("fast").is_err());
    }

    #[test]
    fn sizes() {
        assert_eq!(parse_bytes("1000"), Ok(1000));
        assert_eq!(parse_bytes("600MB"), Ok(600_000_000));
        assert_eq!(parse_bytes("1.5GB"), Ok(1_500_000_000));
        assert_eq!(parse_bytes("2MiB"), Ok(2 << 20));
        assert_eq!(parse_bytes("12 B"), Ok(12));
        assert!(parse_bytes("0").is_err());
        assert!(parse_bytes("-3MB").is_err());
        assert!(parse_bytes("lots").is_err());
    }

    #[test]
    fn seeds_and_selections() {
        assert_eq!(parse_seed_range("3..7"), Ok((3, 7)));
        assert_eq!(parse_seed_range("3..=7"), Ok((3, 7)));
        assert_eq!(parse_seed_range("5"), Ok((5, 5)));
        assert!(parse_seed_range("7..3").is_err());
        assert_eq!(parse_selection("0, 2,1"), Ok(vec![0, 2, 1]));
        assert!(parse_selection("0,x").is_err());
    }
}
