//! Tab-separated text formats for features, thesaurus, annotations,
//! region geometry and manual associations. Blank lines and lines starting
//! with `#` are ignored everywhere.

use voir_core::features::FeatureRecord;
use voir_core::BoundingBox;

use crate::error::{Error, Result};

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

fn err(source: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Format { path: source.to_string(), line, message: message.into() }
}

fn fields<'a>(source: &str, line_no: usize, line: &'a str, min: usize, max: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() < min || f.len() > max {
        let want = if min == max { format!("{min}") } else { format!("{min} to {max}") };
        return Err(err(source, line_no, format!("expected {want} tab-separated fields, found {}", f.len())));
    }
    Ok(f)
}

fn nonempty<'a>(source: &str, line: usize, what: &str, s: &'a str) -> Result<&'a str> {
    let s = s.trim();
    if s.is_empty() {
        return Err(err(source, line, format!("empty {what}")));
    }
    Ok(s)
}

/// `x0,y0,x1,y1` in pixels, half-open.
pub fn parse_bbox(source: &str, line: usize, s: &str) -> Result<BoundingBox> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(source, line, format!("bad bounding box {s:?}: {e}")))?;
    let [x0, y0, x1, y1] = parts[..] else {
        return Err(err(source, line, format!("bounding box {s:?} needs 4 values")));
    };
    BoundingBox::new(x0, y0, x1, y1).map_err(|e| err(source, line, e.to_string()))
}

/// `image_key TAB region_key TAB x0,y0,x1,y1 TAB block=v1,v2,... [TAB block=...]`
pub fn parse_features(source: &str, text: &str) -> Result<Vec<FeatureRecord>> {
    let mut out = Vec::new();
    for (n, line) in content_lines(text) {
        let f = fields(source, n, line, 4, usize::MAX)?;
        let mut blocks = Vec::with_capacity(f.len() - 3);
        for b in &f[3..] {
            let (name, values) = b.split_once('=').ok_or_else(|| err(source, n, format!("block {b:?} lacks '='")))?;
            let name = nonempty(source, n, "block name", name)?;
            let values: Vec<f64> = values
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(source, n, format!("block {name}: {e}")))?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(err(source, n, format!("block {name} has a non-finite value")));
            }
            blocks.push((name.to_string(), values));
        }
        out.push(FeatureRecord {
            image_key: nonempty(source, n, "image key", f[0])?.to_string(),
            region_key: nonempty(source, n, "region key", f[1])?.to_string(),
            bbox: parse_bbox(source, n, f[2])?,
            mask: None,
            blocks,
        });
    }
    Ok(out)
}

/// `term_label TAB parent_label_or_empty`; the second field may be omitted.
pub fn parse_thesaurus(source: &str, text: &str) -> Result<Vec<(String, Option<String>)>> {
    content_lines(text)
        .map(|(n, line)| {
            let f = fields(source, n, line, 1, 2)?;
            let label = nonempty(source, n, "term label", f[0])?.to_string();
            let parent = f.get(1).map(|p| p.trim()).filter(|p| !p.is_empty()).map(str::to_string);
            Ok((label, parent))
        })
        .collect()
}

/// `image_key TAB keyword[,keyword...]`
pub fn parse_annotations(source: &str, text: &str) -> Result<Vec<(String, Vec<String>)>> {
    content_lines(text)
        .map(|(n, line)| {
            let f = fields(source, n, line, 2, 2)?;
            let key = nonempty(source, n, "image key", f[0])?.to_string();
            let kws = f[1].split(',').map(str::trim).filter(|k| !k.is_empty()).map(str::to_string).collect();
            Ok((key, kws))
        })
        .collect()
}

/// `image_key TAB region_key TAB x0,y0,x1,y1`
pub fn parse_regions(source: &str, text: &str) -> Result<Vec<(String, String, BoundingBox)>> {
    content_lines(text)
        .map(|(n, line)| {
            let f = fields(source, n, line, 3, 3)?;
            Ok((
                nonempty(source, n, "image key", f[0])?.to_string(),
                nonempty(source, n, "region key", f[1])?.to_string(),
                parse_bbox(source, n, f[2])?,
            ))
        })
        .collect()
}

/// `term_label TAB region_key`
pub fn parse_associations(source: &str, text: &str) -> Result<Vec<(String, String)>> {
    content_lines(text)
        .map(|(n, line)| {
            let f = fields(source, n, line, 2, 2)?;
            Ok((nonempty(source, n, "term label", f[0])?.to_string(), nonempty(source, n, "region key", f[1])?.to_string()))
        })
        .collect()
}

/// Paired scores, one pair per line, separated by whitespace or a comma.
pub fn parse_pairs(source: &str, text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (n, line) in content_lines(text) {
        let parts: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        let [x, y] = parts[..] else {
            return Err(err(source, n, "expected two numbers"));
        };
        let parse = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| err(source, n, format!("bad number {s:?}")));
        a.push(parse(x)?);
        b.push(parse(y)?);
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_line() {
        let recs = parse_features("f", "# comment\nimg1\tr1\t0,0,4,2\tcolor=0.1,0.2\tshape=1\n\n").unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!((r.image_key.as_str(), r.region_key.as_str()), ("img1", "r1"));
        assert_eq!(r.bbox, BoundingBox::new(0, 0, 4, 2).unwrap());
        assert_eq!(r.blocks, vec![("color".to_string(), vec![0.1, 0.2]), ("shape".to_string(), vec![1.0])]);
    }

    #[test]
    fn features_errors_carry_line_numbers() {
        let e = parse_features("f", "a\tb\t0,0,1,1\tcolor=0.1\na\tc\t0,0,1\tcolor=1\n").unwrap_err();
        assert!(matches!(e, Error::Format { line: 2, .. }), "{e}");
        assert!(parse_features("f", "a\tb\t0,0,1,1\n").is_err());
        assert!(parse_features("f", "a\tb\t0,0,1,1\tcolor=x\n").is_err());
        assert!(parse_features("f", "a\tb\t1,0,1,1\tcolor=1\n").is_err());
        assert!(parse_features("f", "a\tb\t0,0,1,1\tcolor=NaN\n").is_err());
    }

    #[test]
    fn thesaurus_lines() {
        let t = parse_thesaurus("t", "nature\t\nsky\tnature\nsea\n").unwrap();
        assert_eq!(t, vec![("nature".into(), None), ("sky".into(), Some("nature".into())), ("sea".into(), None)]);
        assert!(parse_thesaurus("t", "\tx\n").is_err());
    }

    #[test]
    fn annotations_and_regions() {
        let a = parse_annotations("a", "img1\tsky, sea,,grass\n").unwrap();
        assert_eq!(a, vec![("img1".into(), vec!["sky".into(), "sea".into(), "grass".into()])]);
        let r = parse_regions("r", "img1\tr1\t1,2,3,4\n").unwrap();
        assert_eq!(r[0].2, BoundingBox::new(1, 2, 3, 4).unwrap());
        assert_eq!(parse_associations("m", "sky\tr1\n").unwrap(), vec![("sky".into(), "r1".into())]);
    }

    #[test]
    fn pairs() {
        let (a, b) = parse_pairs("-", "1 2\n3,4\n  5\t6 \n").unwrap();
        assert_eq!((a, b), (vec![1.0, 3.0, 5.0], vec![2.0, 4.0, 6.0]));
        assert!(parse_pairs("-", "1 2 3\n").is_err());
        assert!(parse_pairs("-", "1 inf\n").is_err());
    }
}
