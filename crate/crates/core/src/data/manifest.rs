use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Subset tags with a fixed meaning; manifests may add their own.
pub const KNOWN_TAGS: [&str; 5] = ["height_8ft", "height_9ft", "height_10ft", "hospital", "senior"];

pub const MANIFEST_COLUMNS: [&str; 6] = ["video_id", "dir", "label", "split", "fps", "tags"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::Manifest(format!("unknown split {other:?} (train, val)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub video_id: String,
    /// Frame directory, resolved against the manifest's location.
    pub dir: PathBuf,
    pub fall: bool,
    pub split: Split,
    pub fps: f64,
    pub tags: BTreeSet<String>,
}

impl ManifestRow {
    pub fn label_name(&self) -> &'static str {
        if self.fall {
            "fall"
        } else {
            "nonfall"
        }
    }
}

/// Validated manifest: unique video ids, known labels and splits.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

fn parse_label(s: &str) -> Result<bool> {
    match s.trim() {
        "fall" => Ok(true),
        "nonfall" => Ok(false),
        other => Err(Error::Manifest(format!("unknown label {other:?} (fall, nonfall)"))),
    }
}

/// `|`-separated tag set; empty string is the empty set.
pub fn parse_tags(s: &str) -> BTreeSet<String> {
    s.split('|').map(str::trim).filter(|t| !t.is_empty()).map(str::to_string).collect()
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert(r.video_id.as_str()) {
                return Err(Error::DuplicateVideo(r.video_id.clone()));
            }
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// Parse CSV text; relative `dir` entries are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Manifest("empty manifest".into()));
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        let mut col = [0usize; 6];
        for (i, name) in MANIFEST_COLUMNS.iter().enumerate() {
            col[i] = headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::Manifest(format!("missing column {name:?}")))?;
        }
        let mut rows = Vec::new();
        for (n, rec) in reader.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| rec.get(col[i]).unwrap_or("");
            let line = n + 2;
            let video_id = field(0).to_string();
            if video_id.is_empty() {
                return Err(Error::Manifest(format!("line {line}: empty video_id")));
            }
            let dir = PathBuf::from(field(1));
            let fps: f64 = field(4)
                .parse()
                .map_err(|_| Error::Manifest(format!("line {line}: bad fps {:?}", field(4))))?;
            if !(fps > 0.0) {
                return Err(Error::Manifest(format!("line {line}: fps must be positive")));
            }
            rows.push(ManifestRow {
                dir: if dir.is_absolute() { dir } else { base.join(dir) },
                fall: parse_label(field(2)).map_err(|e| Error::Manifest(format!("line {line}: {e}")))?,
                split: field(3).parse().map_err(|e| Error::Manifest(format!("line {line}: {e}")))?,
                fps,
                tags: parse_tags(field(5)),
                video_id,
            });
        }
        if rows.is_empty() {
            return Err(Error::Manifest("manifest has a header but no rows".into()));
        }
        Self::new(rows)
    }

    pub fn to_csv(&self, base: &Path) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MANIFEST_COLUMNS)?;
        for r in &self.rows {
            let dir = r.dir.strip_prefix(base).unwrap_or(&r.dir);
            let tags: Vec<&str> = r.tags.iter().map(String::as_str).collect();
            w.write_record([
                r.video_id.as_str(),
                &dir.to_string_lossy(),
                r.label_name(),
                r.split.name(),
                &r.fps.to_string(),
                &tags.join("|"),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Manifest(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Tags accepted by [`filter_subset`]: the known set plus any used here.
    pub fn valid_tags(&self) -> BTreeSet<String> {
        let mut tags: BTreeSet<String> = KNOWN_TAGS.iter().map(|t| t.to_string()).collect();
        for r in &self.rows {
            tags.extend(r.tags.iter().cloned());
        }
        tags
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Manifest::parse(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Rows carrying `tag`, in original order with splits untouched. An empty
/// result is logged as a warning, not an error.
pub fn filter_subset(manifest: &Manifest, tag: &str) -> Result<Manifest> {
    let valid = manifest.valid_tags();
    if !valid.contains(tag) {
        return Err(Error::UnknownTag {
            tag: tag.to_string(),
            valid: valid.into_iter().collect::<Vec<_>>().join(", "),
        });
    }
    let rows: Vec<ManifestRow> = manifest.rows.iter().filter(|r| r.tags.contains(tag)).cloned().collect();
    if rows.is_empty() {
        log::warn!("subset {tag:?} matches no videos");
    }
    Ok(Manifest { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "video_id,dir,label,split,fps,tags\n";

    fn parse(body: &str) -> Result<Manifest> {
        Manifest::parse(&format!("{HEADER}{body}"), Path::new("/data"))
    }

    #[test]
    fn two_rows() {
        let m = parse("v1,clips/v1,fall,train,4,height_9ft|senior\nv2,/abs/v2,nonfall,val,12,\n").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.rows[0].dir, PathBuf::from("/data/clips/v1"));
        assert_eq!(m.rows[1].dir, PathBuf::from("/abs/v2"));
        assert_eq!(m.rows[0].tags.len(), 2);
        assert!(m.rows[1].tags.is_empty());
        assert!(m.rows[0].fall && !m.rows[1].fall);
    }

    #[test]
    fn distinct_errors() {
        match parse("v1,a,fall,train,4,\nv1,b,fall,val,4,\n") {
            Err(Error::DuplicateVideo(id)) => assert_eq!(id, "v1"),
            other => panic!("{other:?}"),
        }
        let bad_label = parse("v1,a,tumble,train,4,\n").unwrap_err().to_string();
        assert!(bad_label.contains("unknown label"), "{bad_label}");
        let bad_split = parse("v1,a,fall,test,4,\n").unwrap_err().to_string();
        assert!(bad_split.contains("unknown split"), "{bad_split}");
        let missing = Manifest::parse("video_id,dir,label,split,fps\nv1,a,fall,train,4\n", Path::new("."))
            .unwrap_err()
            .to_string();
        assert!(missing.contains("missing column \"tags\""), "{missing}");
        assert!(Manifest::parse("", Path::new(".")).unwrap_err().to_string().contains("empty"));
    }

    #[test]
    fn subset_filtering() {
        let m = parse(
            "a,a,fall,train,4,height_10ft|hospital\nb,b,nonfall,val,4,height_9ft|hospital|senior\n\
             c,c,fall,val,4,height_10ft|senior|hospital\nd,d,nonfall,train,4,height_8ft\n",
        )
        .unwrap();
        let ten = filter_subset(&m, "height_10ft").unwrap();
        assert_eq!(ten.rows.iter().map(|r| r.video_id.as_str()).collect::<Vec<_>>(), ["a", "c"]);
        let both = filter_subset(&filter_subset(&m, "hospital").unwrap(), "senior").unwrap();
        assert_eq!(both.rows.iter().map(|r| r.video_id.as_str()).collect::<Vec<_>>(), ["b", "c"]);
        let mut only_8 = m.clone();
        only_8.rows.retain(|r| r.video_id == "d");
        assert!(filter_subset(&only_8, "senior").unwrap().is_empty());
        match filter_subset(&m, "basement") {
            Err(Error::UnknownTag { valid, .. }) => assert!(valid.contains("height_9ft")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let m = parse("v1,clips/v1,fall,train,4,height_9ft|senior\nv2,clips/v2,nonfall,val,12,\n").unwrap();
        let text = m.to_csv(Path::new("/data")).unwrap();
        assert_eq!(Manifest::parse(&text, Path::new("/data")).unwrap(), m);
    }
}
