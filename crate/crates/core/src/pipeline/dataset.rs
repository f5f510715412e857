//! Plain-text dataset manifests and year-based splitting.
//!
//! One record per line: `year<TAB>degraded-path<TAB>gt-path`. Relative
//! paths resolve against the manifest's directory. Blank lines and lines
//! starting with `#` are ignored.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use super::image::{load_binary, load_rgb, write_atomic, BinaryImage, RgbImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Record {
    pub year: String,
    pub degraded: PathBuf,
    pub gt: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetIndex {
    pub records: Vec<Record>,
}

impl DatasetIndex {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut records: Vec<Record> = Vec::new();
        let mut seen = std::collections::HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let trimmed = line.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            if fields.len() != 3 || fields.iter().any(|f| f.trim().is_empty()) {
                return Err(Error::Data(format!(
                    "manifest line {line_no}: expected year<TAB>degraded<TAB>gt, got {trimmed:?}"
                )));
            }
            let resolve = |p: &str| {
                let p = Path::new(p.trim());
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            };
            let rec = Record {
                year: fields[0].trim().to_string(),
                degraded: resolve(fields[1]),
                gt: resolve(fields[2]),
            };
            if let Some(first) = seen.insert(rec.clone(), line_no) {
                return Err(Error::Data(format!(
                    "manifest line {line_no}: duplicate of line {first}"
                )));
            }
            records.push(rec);
        }
        Ok(DatasetIndex { records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    /// Serialises with paths written as stored.
    pub fn to_text(&self) -> String {
        self.records
            .iter()
            .map(|r| format!("{}\t{}\t{}\n", r.year, r.degraded.display(), r.gt.display()))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn years(&self) -> Vec<String> {
        self.records.iter().map(|r| r.year.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Partitions by year tag: `(train, test)` with `test` holding exactly the
/// records of `held_out`.
pub fn leave_one_out_split(index: &DatasetIndex, held_out: &str) -> Result<(DatasetIndex, DatasetIndex)> {
    let (test, train): (Vec<Record>, Vec<Record>) =
        index.records.iter().cloned().partition(|r| r.year == held_out);
    if test.is_empty() {
        return Err(Error::Param(format!(
            "year {held_out:?} has no records; known years: {}",
            index.years().join(", ")
        )));
    }
    Ok((DatasetIndex { records: train }, DatasetIndex { records: test }))
}

/// A decoded degraded image and its ground truth.
#[derive(Debug, Clone)]
pub struct Pair {
    pub id: String,
    pub image: RgbImage,
    pub gt: BinaryImage,
}

pub fn load_pair(rec: &Record) -> Result<Pair> {
    let image = load_rgb(&rec.degraded)?;
    let gt = load_binary(&rec.gt)?;
    if (image.width, image.height) != (gt.width, gt.height) {
        return Err(Error::Data(format!(
            "{} is {}x{} but its ground truth {} is {}x{}",
            rec.degraded.display(),
            image.width,
            image.height,
            rec.gt.display(),
            gt.width,
            gt.height
        )));
    }
    let id = rec
        .degraded
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Pair {
        id: format!("{}/{id}", rec.year),
        image,
        gt,
    })
}

pub fn load_pairs(index: &DatasetIndex) -> Result<Vec<Pair>> {
    index.records.iter().map(load_pair).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(years: &[&str]) -> DatasetIndex {
        let text: String = years
            .iter()
            .enumerate()
            .map(|(i, y)| format!("{y}\timg/{i}.png\tgt/{i}.png\n"))
            .collect();
        DatasetIndex::parse(&text, Path::new("/data")).unwrap()
    }

    #[test]
    fn hold_out_one_year() {
        let idx = manifest(&["2009", "2010", "2011", "2012", "2013", "2014", "2016", "2016"]);
        let (train, test) = leave_one_out_split(&idx, "2016").unwrap();
        assert_eq!(train.years(), vec!["2009", "2010", "2011", "2012", "2013", "2014"]);
        assert_eq!(test.len(), 2);
        let mut all = [train.records, test.records].concat();
        all.sort();
        let mut orig = idx.records.clone();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn unknown_year_lists_known() {
        let idx = manifest(&["2009", "2010"]);
        match leave_one_out_split(&idx, "2016") {
            Err(Error::Param(m)) => assert!(m.contains("2009, 2010"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let idx = manifest(&["2010"]);
        assert_eq!(idx.records[0].degraded, PathBuf::from("/data/img/0.png"));
    }

    #[test]
    fn duplicates_and_malformed_lines_name_the_line() {
        let dup = "2009\ta.png\tb.png\n# note\n2009\ta.png\tb.png\n";
        match DatasetIndex::parse(dup, Path::new("")) {
            Err(Error::Data(m)) => assert!(m.contains("line 3") && m.contains("line 1"), "{m}"),
            other => panic!("{other:?}"),
        }
        match DatasetIndex::parse("2009 a.png b.png\n", Path::new("")) {
            Err(Error::Data(m)) => assert!(m.contains("line 1"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn text_round_trip() {
        let idx = manifest(&["2011", "2012"]);
        assert_eq!(DatasetIndex::parse(&idx.to_text(), Path::new("/elsewhere")).unwrap(), idx);
    }
}
