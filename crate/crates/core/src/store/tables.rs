//! CSV manifests (`media_id,subject_id,template_id,video_id`) and pair lists
//! (`template_id_a,template_id_b`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use crate::scalar::Real;

use super::{EmbeddingSet, MediaEntry, MediaManifest, PairList, Split, SplitAssignment};

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    media_id: String,
    subject_id: String,
    template_id: String,
    video_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRow {
    template_id_a: String,
    template_id_b: String,
}

fn check_header(reader: &mut csv::Reader<impl std::io::Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(Error::Format(format!(
            "expected CSV header {:?}, found {:?}",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

/// Parses a manifest CSV from any reader.
pub fn read_manifest(input: impl std::io::Read) -> Result<MediaManifest> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(&mut reader, &["media_id", "subject_id", "template_id", "video_id"])?;
    let mut entries = Vec::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row?;
        entries.push(MediaEntry {
            media_id: row.media_id,
            subject_id: row.subject_id,
            template_id: row.template_id,
            video_id: row.video_id.filter(|v| !v.is_empty()),
        });
    }
    MediaManifest::new(entries)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<MediaManifest> {
    read_manifest(std::fs::File::open(path)?)
}

pub fn save_manifest(manifest: &MediaManifest, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in manifest.entries() {
        w.serialize(ManifestRow {
            media_id: e.media_id.clone(),
            subject_id: e.subject_id.clone(),
            template_id: e.template_id.clone(),
            video_id: e.video_id.clone(),
        })?;
    }
    if manifest.is_empty() {
        w.write_record(["media_id", "subject_id", "template_id", "video_id"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs(input: impl std::io::Read, manifest: Option<&MediaManifest>) -> Result<PairList> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    check_header(&mut reader, &["template_id_a", "template_id_b"])?;
    let mut pairs = Vec::new();
    for row in reader.deserialize::<PairRow>() {
        let row = row?;
        pairs.push((row.template_id_a, row.template_id_b));
    }
    let list = PairList::new(pairs)?;
    if let Some(m) = manifest {
        list.validate(m)?;
    }
    Ok(list)
}

/// Reads a pair list; when `manifest` is given every template id must resolve against it.
pub fn load_pairs(path: impl AsRef<Path>, manifest: Option<&MediaManifest>) -> Result<PairList> {
    read_pairs(std::fs::File::open(path)?, manifest)
}

pub fn save_pairs(pairs: &PairList, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (a, b) in pairs.pairs() {
        w.serialize(PairRow { template_id_a: a.clone(), template_id_b: b.clone() })?;
    }
    if pairs.is_empty() {
        w.write_record(["template_id_a", "template_id_b"])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitRow {
    media_id: String,
    split: Split,
}

/// Reads a `media_id,split` CSV where split is `enrollment` or `verification`.
pub fn load_split(path: impl AsRef<Path>) -> Result<SplitAssignment> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    check_header(&mut reader, &["media_id", "split"])?;
    let mut out = SplitAssignment::new();
    for row in reader.deserialize::<SplitRow>() {
        let row = row?;
        if out.insert(row.media_id.clone(), row.split).is_some() {
            return Err(Error::Data(format!("media {:?} listed twice in split file", row.media_id)));
        }
    }
    Ok(out)
}

pub fn save_split(split: &SplitAssignment, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["media_id", "split"])?;
    for (id, s) in split {
        let name = match s {
            Split::Enrollment => "enrollment",
            Split::Verification => "verification",
        };
        w.write_record([id.as_str(), name])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses embeddings from CSV rows `media_id,x_0,…,x_{d-1}`; the header must
/// start with `media_id` and the remaining column names are ignored.
pub fn read_embeddings_csv<T: Real>(input: impl std::io::Read, model_id: &str) -> Result<EmbeddingSet<T>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers()?.clone();
    if header.get(0) != Some("media_id") || header.len() < 2 {
        return Err(Error::Format("embedding CSV header must be media_id followed by one column per dimension".into()));
    }
    let mut set = EmbeddingSet::new(model_id, header.len() - 1)?;
    let mut row = Vec::with_capacity(set.dim());
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        row.clear();
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Data(format!("row {}: {field:?} is not a number", line + 1)))?;
            row.push(T::lit(v));
        }
        set.push(&record[0], &row)?;
    }
    if !set.is_empty() && set.all_unit() {
        set = set.into_normalized()?;
    }
    Ok(set)
}

pub fn load_embeddings_csv<T: Real>(path: impl AsRef<Path>, model_id: &str) -> Result<EmbeddingSet<T>> {
    read_embeddings_csv(std::fs::File::open(path)?, model_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_from_csv() {
        let csv = "media_id,x0,x1\na,0.6,0.8\nb,1,0\n";
        let set = read_embeddings_csv::<f64>(csv.as_bytes(), "m").unwrap();
        assert_eq!((set.len(), set.dim(), set.model_id()), (2, 2, "m"));
        assert_eq!(set.get("a"), Some(&[0.6, 0.8][..]));
        assert!(set.is_normalized());
        let raw = read_embeddings_csv::<f64>("media_id,x0\na,3\n".as_bytes(), "m").unwrap();
        assert!(!raw.is_normalized());
        assert!(matches!(read_embeddings_csv::<f64>("id,x0\na,1\n".as_bytes(), "m"), Err(Error::Format(_))));
        assert!(matches!(read_embeddings_csv::<f64>("media_id,x0\na,nope\n".as_bytes(), "m"), Err(Error::Data(_))));
        assert!(matches!(read_embeddings_csv::<f64>("media_id,x0\na,1\na,1\n".as_bytes(), "m"), Err(Error::Data(_))));
    }

    #[test]
    fn manifest_with_shared_video() {
        let csv = "media_id,subject_id,template_id,video_id\nf1,s1,t1,v1\nf2,s1,t1,v1\ni1,s1,t1,\n";
        let m = read_manifest(csv.as_bytes()).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.media("f2").unwrap().video_id.as_deref(), Some("v1"));
        assert_eq!(m.media("i1").unwrap().video_id, None);
    }

    #[test]
    fn manifest_consistency_error() {
        let csv = "media_id,subject_id,template_id,video_id\na,s1,t1,\nb,s2,t1,\n";
        assert!(matches!(read_manifest(csv.as_bytes()), Err(Error::Consistency(_))));
    }

    #[test]
    fn manifest_duplicate_media() {
        let csv = "media_id,subject_id,template_id,video_id\na,s1,t1,\na,s1,t1,\n";
        assert!(matches!(read_manifest(csv.as_bytes()), Err(Error::Data(_))));
    }

    #[test]
    fn wrong_header() {
        let csv = "id,subject,template,video\na,s1,t1,\n";
        assert!(matches!(read_manifest(csv.as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn pairs_unknown_template() {
        let m = read_manifest("media_id,subject_id,template_id,video_id\na,s1,t1,\n".as_bytes()).unwrap();
        let csv = "template_id_a,template_id_b\nt1,t2\n";
        assert!(matches!(read_pairs(csv.as_bytes(), Some(&m)), Err(Error::Reference(_))));
        assert!(read_pairs(csv.as_bytes(), None).is_ok());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let csv = "media_id,subject_id,template_id,video_id\nf1,s1,t1,v1\ni1,s2,t2,\n";
        let m = read_manifest(csv.as_bytes()).unwrap();
        save_manifest(&m, dir.path().join("m.csv")).unwrap();
        let back = load_manifest(dir.path().join("m.csv")).unwrap();
        assert_eq!(back.entries(), m.entries());

        let p = PairList::new(vec![("t1".into(), "t2".into())]).unwrap();
        save_pairs(&p, dir.path().join("p.csv")).unwrap();
        assert_eq!(load_pairs(dir.path().join("p.csv"), Some(&back)).unwrap(), p);

        let split: SplitAssignment =
            [("f1".to_string(), Split::Enrollment), ("i1".to_string(), Split::Verification)].into();
        save_split(&split, dir.path().join("s.csv")).unwrap();
        assert_eq!(load_split(dir.path().join("s.csv")).unwrap(), split);
    }
}
