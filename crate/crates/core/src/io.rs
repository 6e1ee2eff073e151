//! On-disk formats: ASM1 binary matrices, CSV matrices, segment maps,
//! query labels and atomic output writes.
//!
//! ASM1 layout (all integers little-endian):
//!
//! ```text
//! "ASM1" | u8 dtype (0 = f32, 1 = f64) | u8 layout (0 = row-major)
//! u64 M | u64 T | M·T values
//! row ids:    u64 count, then count × (u64 byte length, UTF-8 bytes)
//! column ids: u64 count, then count × (u64 byte length, UTF-8 bytes)
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AriaError, Result};
use crate::matrix::{MatrixData, Precision, ScoreMatrix};

pub const ASM1_MAGIC: &[u8; 4] = b"ASM1";
const MAX_ID_BYTES: u64 = 1 << 20;
const READ_CHUNK_VALUES: usize = 1 << 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    Asm1,
    Csv,
}

impl MatrixFormat {
    /// `.csv` means CSV; anything else is treated as ASM1.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::Asm1,
        }
    }
}

impl FromStr for MatrixFormat {
    type Err = AriaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "asm1" => Ok(MatrixFormat::Asm1),
            "csv" => Ok(MatrixFormat::Csv),
            other => Err(AriaError::InvalidInput(format!("unknown matrix format `{other}`"))),
        }
    }
}

pub fn load_score_matrix(path: impl AsRef<Path>, format: MatrixFormat) -> Result<ScoreMatrix> {
    let path = path.as_ref();
    match format {
        MatrixFormat::Asm1 => read_asm1(path),
        MatrixFormat::Csv => read_matrix_csv(path),
    }
}

pub fn write_score_matrix(path: impl AsRef<Path>, s: &ScoreMatrix, format: MatrixFormat) -> Result<()> {
    let path = path.as_ref();
    match format {
        MatrixFormat::Asm1 => atomic_write(path, |w| write_asm1_to(w, s)),
        MatrixFormat::Csv => atomic_write(path, |w| write_matrix_csv_to(w, s)),
    }
}

pub fn read_asm1(path: &Path) -> Result<ScoreMatrix> {
    let file = File::open(path).map_err(|e| AriaError::io(path, e))?;
    let mut r = BufReader::with_capacity(1 << 20, file);
    read_asm1_from(&mut r, &path.display().to_string())
}

pub fn read_asm1_from<R: Read>(r: &mut R, name: &str) -> Result<ScoreMatrix> {
    let io = |e: std::io::Error| AriaError::parse(name, format!("truncated or unreadable ASM1 data: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != ASM1_MAGIC {
        return Err(AriaError::parse(name, format!("bad magic {magic:?}, expected \"ASM1\"")));
    }
    let mut tag = [0u8; 2];
    r.read_exact(&mut tag).map_err(io)?;
    let precision = match tag[0] {
        0 => Precision::F32,
        1 => Precision::F64,
        d => return Err(AriaError::parse(name, format!("unknown dtype {d}"))),
    };
    if tag[1] != 0 {
        return Err(AriaError::parse(name, format!("unsupported layout {}", tag[1])));
    }
    let rows = read_u64(r).map_err(io)?;
    let cols = read_u64(r).map_err(io)?;
    let n = rows
        .checked_mul(cols)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| AriaError::parse(name, format!("matrix size {rows}x{cols} overflows")))?;
    let (rows, cols) = (rows as usize, cols as usize);

    let data = match precision {
        Precision::F32 => MatrixData::F32(read_values(r, n, f32::from_le_bytes).map_err(io)?),
        Precision::F64 => MatrixData::F64(read_values(r, n, f64::from_le_bytes).map_err(io)?),
    };
    let row_ids = read_id_block(r, name)?;
    let col_ids = read_id_block(r, name)?;
    ScoreMatrix::new(rows, cols, data, row_ids, col_ids)
}

fn read_values<R: Read, T: Copy, const W: usize>(
    r: &mut R,
    n: usize,
    decode: fn([u8; W]) -> T,
) -> std::io::Result<Vec<T>> {
    let mut out = Vec::with_capacity(n);
    let mut buf = vec![0u8; READ_CHUNK_VALUES * W];
    let mut left = n;
    while left > 0 {
        let take = left.min(READ_CHUNK_VALUES);
        let bytes = &mut buf[..take * W];
        r.read_exact(bytes)?;
        out.extend(
            bytes
                .chunks_exact(W)
                .map(|c| decode(c.try_into().expect("chunk width"))),
        );
        left -= take;
    }
    Ok(out)
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_id_block<R: Read>(r: &mut R, name: &str) -> Result<Vec<String>> {
    let io = |e: std::io::Error| AriaError::parse(name, format!("truncated id block: {e}"));
    let count = read_u64(r).map_err(io)?;
    let mut ids = Vec::with_capacity(count.min(1 << 24) as usize);
    for _ in 0..count {
        let len = read_u64(r).map_err(io)?;
        if len > MAX_ID_BYTES {
            return Err(AriaError::parse(name, format!("id length {len} exceeds limit")));
        }
        let mut bytes = vec![0u8; len as usize];
        r.read_exact(&mut bytes).map_err(io)?;
        let id = String::from_utf8(bytes).map_err(|_| AriaError::parse(name, "id is not valid UTF-8"))?;
        ids.push(id);
    }
    Ok(ids)
}

pub fn write_asm1_to<W: Write>(w: &mut W, s: &ScoreMatrix) -> std::io::Result<()> {
    w.write_all(ASM1_MAGIC)?;
    let dtype = match s.precision() {
        Precision::F32 => 0u8,
        Precision::F64 => 1u8,
    };
    w.write_all(&[dtype, 0u8])?;
    w.write_all(&(s.nrows() as u64).to_le_bytes())?;
    w.write_all(&(s.ncols() as u64).to_le_bytes())?;
    match s.data() {
        MatrixData::F32(v) => {
            for chunk in v.chunks(READ_CHUNK_VALUES) {
                let bytes: Vec<u8> = chunk.iter().flat_map(|x| x.to_le_bytes()).collect();
                w.write_all(&bytes)?;
            }
        }
        MatrixData::F64(v) => {
            for chunk in v.chunks(READ_CHUNK_VALUES) {
                let bytes: Vec<u8> = chunk.iter().flat_map(|x| x.to_le_bytes()).collect();
                w.write_all(&bytes)?;
            }
        }
    }
    write_id_block(w, s.row_ids())?;
    write_id_block(w, s.col_ids())
}

pub(crate) fn write_id_block<W: Write>(w: &mut W, ids: &[String]) -> std::io::Result<()> {
    w.write_all(&(ids.len() as u64).to_le_bytes())?;
    for id in ids {
        w.write_all(&(id.len() as u64).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
    }
    Ok(())
}

/// Streams an ASM1 file row block by row block without holding the matrix
/// in memory. Used for matrices too large to build twice.
pub struct Asm1StreamWriter {
    writer: BufWriter<tempfile::NamedTempFile>,
    path: PathBuf,
    rows: usize,
    cols: usize,
    written_values: usize,
    precision: Precision,
}

impl Asm1StreamWriter {
    pub fn create(path: &Path, rows: usize, cols: usize, precision: Precision) -> Result<Self> {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        std::fs::create_dir_all(dir).map_err(|e| AriaError::io(dir, e))?;
        let file = tempfile::NamedTempFile::new_in(dir).map_err(|e| AriaError::io(path, e))?;
        let mut writer = BufWriter::with_capacity(1 << 20, file);
        let dtype = match precision {
            Precision::F32 => 0u8,
            Precision::F64 => 1u8,
        };
        let header = [ASM1_MAGIC.as_slice(), &[dtype, 0u8]].concat();
        let io = |e| AriaError::io(path, e);
        writer.write_all(&header).map_err(io)?;
        writer.write_all(&(rows as u64).to_le_bytes()).map_err(io)?;
        writer.write_all(&(cols as u64).to_le_bytes()).map_err(io)?;
        Ok(Asm1StreamWriter {
            writer,
            path: path.to_path_buf(),
            rows,
            cols,
            written_values: 0,
            precision,
        })
    }

    pub fn write_rows(&mut self, values: &[f64]) -> std::io::Result<()> {
        self.written_values += values.len();
        let bytes: Vec<u8> = match self.precision {
            Precision::F32 => values.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect(),
            Precision::F64 => values.iter().flat_map(|x| x.to_le_bytes()).collect(),
        };
        self.writer.write_all(&bytes)
    }

    pub fn finish(mut self, row_ids: &[String], col_ids: &[String]) -> Result<()> {
        if self.written_values != self.rows * self.cols || row_ids.len() != self.rows || col_ids.len() != self.cols {
            return Err(AriaError::DimensionMismatch(format!(
                "streamed {} values / {} row ids / {} col ids for a {}x{} matrix",
                self.written_values,
                row_ids.len(),
                col_ids.len(),
                self.rows,
                self.cols
            )));
        }
        let path = self.path.clone();
        let io = |e: std::io::Error| AriaError::io(&path, e);
        write_id_block(&mut self.writer, row_ids).map_err(io)?;
        write_id_block(&mut self.writer, col_ids).map_err(io)?;
        let tmp = self.writer.into_inner().map_err(|e| io(e.into_error()))?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        Ok(())
    }
}

/// CSV matrix: a header row `row_id,<query ids…>`, then `row_id,v1,…,vT`.
/// Always loaded as 64-bit.
pub fn read_matrix_csv(path: &Path) -> Result<ScoreMatrix> {
    let name = path.display().to_string();
    let mut rdr = csv_reader(path)?;
    let mut records = rdr.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| AriaError::parse(&name, e.to_string()))?,
        None => return Err(AriaError::parse(&name, "empty file")),
    };
    if header.len() < 2 {
        return Err(AriaError::parse(&name, "header needs a row-id column and at least one query column"));
    }
    let col_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let cols = col_ids.len();
    let mut row_ids = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in records.enumerate() {
        let rec = rec.map_err(|e| AriaError::parse(&name, e.to_string()))?;
        if rec.len() != cols + 1 {
            return Err(AriaError::DimensionMismatch(format!(
                "{name}: data row {line} has {} values, header declares {cols}",
                rec.len().saturating_sub(1)
            )));
        }
        row_ids.push(rec[0].trim().to_string());
        for (j, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                AriaError::parse(&name, format!("cannot parse `{field}` at (row {line}, col {j})"))
            })?;
            values.push(v);
        }
    }
    let rows = row_ids.len();
    ScoreMatrix::from_f64(rows, cols, values, row_ids, col_ids)
}

pub fn write_matrix_csv_to<W: Write>(w: &mut W, s: &ScoreMatrix) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["row_id".to_string()];
    header.extend(s.col_ids().iter().cloned());
    wtr.write_record(&header)?;
    for (i, id) in s.row_ids().iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend((0..s.ncols()).map(|j| format_value(s.get(i, j), s.precision())));
        wtr.write_record(&rec)?;
    }
    wtr.flush()
}

fn format_value(x: f64, precision: Precision) -> String {
    match precision {
        Precision::F32 => format!("{}", x as f32),
        Precision::F64 => format!("{x}"),
    }
}

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| AriaError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file))
}

/// Segment → track assignment used for track aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMap {
    tracks: Vec<String>,
    track_index: HashMap<String, usize>,
    assignment: HashMap<String, (usize, usize)>,
    track_sizes: Vec<usize>,
}

impl SegmentMap {
    /// Builds from `(segment, track)` pairs; within-track indices follow
    /// the order of appearance. Tracks are ordered by first appearance.
    pub fn from_pairs<I, S, T>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut map = SegmentMap {
            tracks: Vec::new(),
            track_index: HashMap::new(),
            assignment: HashMap::new(),
            track_sizes: Vec::new(),
        };
        for (seg, track) in pairs {
            map.insert(seg.into(), track.into(), None)?;
        }
        Ok(map)
    }

    /// One track per segment, with the same id.
    pub fn identity(ids: &[String]) -> Result<Self> {
        Self::from_pairs(ids.iter().map(|id| (id.clone(), id.clone())))
    }

    fn insert(&mut self, seg: String, track: String, k: Option<usize>) -> Result<()> {
        let t = match self.track_index.get(&track) {
            Some(&t) => t,
            None => {
                self.tracks.push(track.clone());
                self.track_sizes.push(0);
                self.track_index.insert(track, self.tracks.len() - 1);
                self.tracks.len() - 1
            }
        };
        let k = k.unwrap_or(self.track_sizes[t]);
        self.track_sizes[t] += 1;
        if self.assignment.insert(seg.clone(), (t, k)).is_some() {
            return Err(AriaError::DuplicateId { kind: "segment", id: seg });
        }
        Ok(())
    }

    /// CSV `segment_id,track_id[,k]`; a header row starting with
    /// `segment_id` is skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path.display().to_string();
        let mut map = SegmentMap::from_pairs(std::iter::empty::<(String, String)>())?;
        for (line, rec) in csv_reader(path)?.records().enumerate() {
            let rec = rec.map_err(|e| AriaError::parse(&name, e.to_string()))?;
            if line == 0 && rec.get(0) == Some("segment_id") {
                continue;
            }
            if rec.len() < 2 || rec.len() > 3 {
                return Err(AriaError::parse(&name, format!("line {line}: expected segment_id,track_id[,k]")));
            }
            let k = match rec.get(2) {
                Some(k) if !k.is_empty() => Some(
                    k.parse()
                        .map_err(|_| AriaError::parse(&name, format!("line {line}: bad index `{k}`")))?,
                ),
                _ => None,
            };
            map.insert(rec[0].to_string(), rec[1].to_string(), k)?;
        }
        Ok(map)
    }

    pub fn tracks(&self) -> &[String] {
        &self.tracks
    }

    pub fn track_sizes(&self) -> &[usize] {
        &self.track_sizes
    }

    pub fn num_segments(&self) -> usize {
        self.assignment.len()
    }

    /// `(track index, within-track index)` of a segment.
    pub fn lookup(&self, segment: &str) -> Option<(usize, usize)> {
        self.assignment.get(segment).copied()
    }

    pub fn write_csv<W: Write>(&self, w: W, segments: &[String]) -> std::io::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["segment_id", "track_id", "k"])?;
        for seg in segments {
            if let Some((t, k)) = self.lookup(seg) {
                wtr.write_record([seg.as_str(), self.tracks[t].as_str(), &k.to_string()])?;
            }
        }
        wtr.flush()
    }
}

/// Query id → label (e.g. genre). Coverage may be partial.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryLabels {
    labels: BTreeMap<String, String>,
}

impl QueryLabels {
    pub fn from_pairs<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        QueryLabels {
            labels: pairs.into_iter().map(|(a, b)| (a.into(), b.into())).collect(),
        }
    }

    /// CSV `query_id,label`; a header row starting with `query_id` is skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path.display().to_string();
        let mut labels = BTreeMap::new();
        for (line, rec) in csv_reader(path)?.records().enumerate() {
            let rec = rec.map_err(|e| AriaError::parse(&name, e.to_string()))?;
            if line == 0 && rec.get(0) == Some("query_id") {
                continue;
            }
            if rec.len() != 2 {
                return Err(AriaError::parse(&name, format!("line {line}: expected query_id,label")));
            }
            if labels.insert(rec[0].to_string(), rec[1].to_string()).is_some() {
                return Err(AriaError::DuplicateId {
                    kind: "query label",
                    id: rec[0].to_string(),
                });
            }
        }
        Ok(QueryLabels { labels })
    }

    pub fn get(&self, query: &str) -> Option<&str> {
        self.labels.get(query).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Every labelled query must exist in `query_ids`.
    pub fn validate_against(&self, query_ids: &[String]) -> Result<()> {
        let known: std::collections::HashSet<&str> = query_ids.iter().map(String::as_str).collect();
        let extra: Vec<String> = self
            .labels
            .keys()
            .filter(|q| !known.contains(q.as_str()))
            .cloned()
            .collect();
        if extra.is_empty() {
            Ok(())
        } else {
            Err(AriaError::IdMismatch {
                what: "query labels".into(),
                missing: vec![],
                extra,
            })
        }
    }
}

/// Writes `path` through a temporary file in the same directory and renames
/// it into place, so readers never observe a partial file.
pub fn atomic_write<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<&mut File>) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| AriaError::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| AriaError::io(&dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w).map_err(|e| AriaError::io(path, e))?;
        w.flush().map_err(|e| AriaError::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| AriaError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, |w| w.write_all(text.as_bytes()))
}
