use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::protocol::{EvalUnit, Mode, ProtocolSpec, Route};
use super::run::{EmbeddingRecord, EmbeddingSet, EvalReport};
use super::EvalError;
use crate::dataset::{Condition, Modality};

const EMBED_MAGIC: &[u8; 8] = b"OGEMB\0\0\x01";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbedHeader {
    spec: ProtocolSpec,
    checkpoint_sha256: String,
    channels: usize,
    parts: usize,
    skipped_unpaired: usize,
    gallery: usize,
    probes: usize,
}

/// Magic, little-endian header length, JSON header, then per record a
/// length-prefixed key and `channels * parts` little-endian f32 values.
pub fn embeddings_to_bytes(set: &EmbeddingSet) -> Vec<u8> {
    let header = EmbedHeader {
        spec: set.spec,
        checkpoint_sha256: set.checkpoint_sha256.clone(),
        channels: set.channels,
        parts: set.parts,
        skipped_unpaired: set.skipped_unpaired,
        gallery: set.gallery.len(),
        probes: set.probes.len(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(EMBED_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for r in set.gallery.iter().chain(&set.probes) {
        let key = r.unit.key();
        out.extend_from_slice(&(key.len() as u32).to_le_bytes());
        out.extend_from_slice(key.as_bytes());
        for v in r.feature.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EvalError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| EvalError::Format("embedding file is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn embeddings_from_bytes(buf: &[u8]) -> Result<EmbeddingSet, EvalError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != EMBED_MAGIC {
        return Err(EvalError::Format("not an embedding file".into()));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| EvalError::Format("header length overflows".into()))?;
    let header: EmbedHeader =
        serde_json::from_slice(r.take(len)?).map_err(|e| EvalError::Format(format!("embedding header: {e}")))?;
    let n = header.channels * header.parts;
    let mut records = Vec::with_capacity(header.gallery + header.probes);
    for _ in 0..header.gallery + header.probes {
        let klen = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
        let key = std::str::from_utf8(r.take(klen)?).map_err(|_| EvalError::Format("key is not UTF-8".into()))?;
        let unit = EvalUnit::parse_key(key)?;
        let values: Vec<f32> = r
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let feature = Array2::from_shape_vec((header.channels, header.parts), values).expect("sized");
        records.push(EmbeddingRecord { unit, feature });
    }
    if r.pos != buf.len() {
        return Err(EvalError::Format("trailing bytes after the last record".into()));
    }
    let probes = records.split_off(header.gallery);
    Ok(EmbeddingSet {
        spec: header.spec,
        checkpoint_sha256: header.checkpoint_sha256,
        channels: header.channels,
        parts: header.parts,
        skipped_unpaired: header.skipped_unpaired,
        gallery: records,
        probes,
    })
}

pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<(), EvalError> {
    std::fs::write(path, embeddings_to_bytes(set)).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet, EvalError> {
    let buf = std::fs::read(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    embeddings_from_bytes(&buf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Rank1,
    Map,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Rank1, Metric::Map];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Rank1 => "rank1",
            Metric::Map => "map",
        }
    }

    fn from_name(s: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Probe-by-gallery modality matrices per metric and condition. The
/// diagonal holds single-modal results, the rest cross-modal ones.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityMatrix {
    pub modalities: Vec<Modality>,
    /// Rows are probe modalities, columns gallery modalities.
    pub tables: BTreeMap<(Metric, Condition), Vec<Vec<Option<f64>>>>,
}

impl ModalityMatrix {
    pub fn get(&self, metric: Metric, c: Condition, probe: Modality, gallery: Modality) -> Option<f64> {
        let i = self.modalities.iter().position(|&m| m == probe)?;
        let j = self.modalities.iter().position(|&m| m == gallery)?;
        self.tables.get(&(metric, c))?[i][j]
    }

    /// Header `metric,condition,probe,<gallery modalities>`, one row per
    /// probe modality, values with six decimals, empty when missing.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["metric".to_string(), "condition".into(), "probe".into()];
        header.extend(self.modalities.iter().map(|m| m.tag().to_string()));
        w.write_record(&header).expect("in-memory write");
        for ((metric, c), rows) in &self.tables {
            for (m, row) in self.modalities.iter().zip(rows) {
                let mut rec = vec![metric.name().to_string(), c.code().to_string(), m.tag().to_string()];
                rec.extend(row.iter().map(|v| v.map_or(String::new(), |v| format!("{v:.6}"))));
                w.write_record(&rec).expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flushed")).expect("ascii")
    }

    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let bad = |what: String| EvalError::Format(format!("matrix csv: {what}"));
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.len() < 4 || &header[0] != "metric" || &header[1] != "condition" || &header[2] != "probe" {
            return Err(bad("unexpected header".into()));
        }
        let modalities = header
            .iter()
            .skip(3)
            .map(|t| Modality::from_tag(t).ok_or_else(|| bad(format!("unknown modality `{t}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        let n = modalities.len();
        let mut tables: BTreeMap<(Metric, Condition), Vec<Vec<Option<f64>>>> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let metric = Metric::from_name(&rec[0]).ok_or_else(|| bad(format!("unknown metric `{}`", &rec[0])))?;
            let cond = Condition::from_code(&rec[1]).ok_or_else(|| bad(format!("unknown condition `{}`", &rec[1])))?;
            let probe = Modality::from_tag(&rec[2]).ok_or_else(|| bad(format!("unknown modality `{}`", &rec[2])))?;
            let i = modalities.iter().position(|&m| m == probe).ok_or_else(|| bad(format!("row `{probe}` has no column")))?;
            let table = tables.entry((metric, cond)).or_insert_with(|| vec![vec![None; n]; n]);
            for (j, field) in rec.iter().skip(3).enumerate() {
                table[i][j] = if field.is_empty() {
                    None
                } else {
                    Some(field.parse().map_err(|_| bad(format!("bad value `{field}`")))?)
                };
            }
        }
        Ok(ModalityMatrix { modalities, tables })
    }
}

/// Arranges single- and cross-modal reports into modality matrices, with
/// modalities in order of first appearance.
pub fn modality_matrix(reports: &[EvalReport]) -> Result<ModalityMatrix, EvalError> {
    let mut cells = BTreeMap::new();
    for r in reports {
        let (probe, gallery) = match (r.spec.mode(), r.spec.probe(), r.spec.gallery()) {
            (Mode::Single | Mode::Cross, Route::Single(p), Route::Single(g)) => (p, g),
            _ => return Err(EvalError::InvalidSpec(format!("{} has no place in a modality matrix", r.spec))),
        };
        if cells.insert((probe, gallery), r).is_some() {
            return Err(EvalError::InvalidSpec(format!("two reports for probe {probe}, gallery {gallery}")));
        }
    }
    // first-appearance order, so the caller's modality order is kept
    let mut modalities: Vec<Modality> = Vec::new();
    for r in reports {
        for route in [r.spec.probe(), r.spec.gallery()] {
            if let Route::Single(m) = route {
                if !modalities.contains(&m) {
                    modalities.push(m);
                }
            }
        }
    }
    let conditions: BTreeSet<Condition> = reports.iter().flat_map(|r| r.conditions.keys().copied()).collect();
    let n = modalities.len();
    let mut tables = BTreeMap::new();
    for metric in Metric::ALL {
        for &c in &conditions {
            let mut t = vec![vec![None; n]; n];
            for (i, &p) in modalities.iter().enumerate() {
                for (j, &g) in modalities.iter().enumerate() {
                    t[i][j] = cells.get(&(p, g)).and_then(|r| match metric {
                        Metric::Rank1 => r.rank1(c),
                        Metric::Map => r.map(c),
                    });
                }
            }
            tables.insert((metric, c), t);
        }
    }
    Ok(ModalityMatrix { modalities, tables })
}

pub fn export_matrix_csv(path: &Path, matrix: &ModalityMatrix) -> Result<(), EvalError> {
    std::fs::write(path, matrix.to_csv()).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One row per protocol and condition with the cross-view means (views
/// `all`), followed by one row per evaluated view pair.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    w.write_record(["protocol", "condition", "probe_view", "gallery_view", "rank1", "map", "evaluated_pairs", "skipped_pairs", "excluded_probes"])
        .expect("in-memory write");
    for r in reports {
        for (c, cr) in &r.conditions {
            w.write_record([
                r.spec.to_string(),
                c.code().to_string(),
                "all".into(),
                "all".into(),
                fmt(cr.rank1),
                fmt(cr.map),
                cr.evaluated_pairs.to_string(),
                cr.skipped_pairs.to_string(),
                cr.excluded_probes.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    for r in reports {
        for (c, cr) in &r.conditions {
            for (i, pv) in r.views.iter().enumerate() {
                for (j, gv) in r.views.iter().enumerate() {
                    let r1 = cr.rank1_matrix.get(i, j);
                    if i == j || r1.is_none() {
                        continue;
                    }
                    w.write_record([
                        r.spec.to_string(),
                        c.code().to_string(),
                        pv.to_string(),
                        gv.to_string(),
                        fmt(r1),
                        fmt(cr.map_matrix.get(i, j)),
                        String::new(),
                        String::new(),
                        String::new(),
                    ])
                    .expect("in-memory write");
                }
            }
        }
    }
    String::from_utf8(w.into_inner().expect("flushed")).expect("ascii")
}
