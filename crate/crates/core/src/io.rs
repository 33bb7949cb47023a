//! CSV files exchanged between the subcommands.
//!
//! Every file opens with a comment line `# legtrack <kind> v1`, optionally
//! followed by `key=value` tags, then a normal CSV header row. Readers
//! reject a wrong kind or an unknown version.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::imu::ImuSample;
use crate::pipeline::{CameraFrame3d, EstimateRow, TruthRow, Variant};
use crate::quat::{Quaternion, Vec3};
use crate::sim::{ImuStreams, TruthStep};
use crate::vision::{Joint, MarkerObservation};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Shortest round-trip decimal; byte-stable across runs.
fn num(x: f64) -> String {
    format!("{x}")
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

fn push_vec(row: &mut Vec<String>, v: Vec3<f64>) {
    row.extend([num(v.x), num(v.y), num(v.z)]);
}

fn push_quat(row: &mut Vec<String>, q: Quaternion<f64>) {
    row.extend([num(q.w), num(q.x), num(q.y), num(q.z)]);
}

fn vec_cols(prefix: &str) -> [String; 3] {
    ["x", "y", "z"].map(|a| format!("{prefix}_{a}"))
}

fn quat_cols(prefix: &str) -> [String; 4] {
    ["w", "x", "y", "z"].map(|a| format!("{prefix}_{a}"))
}

fn joint_cols() -> Vec<String> {
    Joint::ALL.iter().flat_map(|j| vec_cols(j.name())).collect()
}

/// Writes one table: comment line, header row, then records.
pub fn write_table(
    path: &Path,
    kind: &str,
    tags: &[(&str, &str)],
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let mut line = format!("# legtrack {kind} v{FORMAT_VERSION}");
    for (k, v) in tags {
        line.push_str(&format!(" {k}={v}"));
    }
    writeln!(out, "{line}").map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(&r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// A parsed table with its tags and columns looked up by name.
#[derive(Debug)]
pub struct Table {
    pub path: PathBuf,
    pub tags: BTreeMap<String, String>,
    header: Vec<String>,
    pub records: Vec<csv::StringRecord>,
}

impl Table {
    pub fn read(path: &Path, kind: &str) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut reader = BufReader::new(file);
        let mut first = String::new();
        reader.read_line(&mut first).map_err(io_err(path))?;
        let mut words = first.split_whitespace();
        if words.next() != Some("#") || words.next() != Some("legtrack") {
            return Err(format_err(path, "missing '# legtrack' header line"));
        }
        let found = words.next().unwrap_or("");
        if found != kind {
            return Err(format_err(path, format!("expected {kind} file, found '{found}'")));
        }
        let version = words.next().unwrap_or("");
        if version != format!("v{FORMAT_VERSION}") {
            return Err(format_err(path, format!("unsupported version '{version}'")));
        }
        let tags = words
            .filter_map(|w| w.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let mut csv = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
        let header = csv.headers().map_err(csv_err(path))?.iter().map(str::to_string).collect();
        let records = csv
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(csv_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            tags,
            header,
            records,
        })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format_err(&self.path, format!("missing column '{name}'")))
    }

    fn columns<const N: usize>(&self, names: [String; N]) -> Result<[usize; N]> {
        let mut out = [0; N];
        for (o, n) in out.iter_mut().zip(names.iter()) {
            *o = self.column(n)?;
        }
        Ok(out)
    }

    fn field<'a>(&self, row: usize, rec: &'a csv::StringRecord, col: usize) -> Result<&'a str> {
        rec.get(col)
            .ok_or_else(|| format_err(&self.path, format!("row {}: too few fields", row + 1)))
    }

    pub fn f64(&self, row: usize, rec: &csv::StringRecord, col: usize) -> Result<f64> {
        let s = self.field(row, rec, col)?;
        s.trim().parse().map_err(|_| {
            format_err(
                &self.path,
                format!("row {}, column '{}': bad number '{s}'", row + 1, self.header[col]),
            )
        })
    }

    pub fn flag(&self, row: usize, rec: &csv::StringRecord, col: usize) -> Result<bool> {
        match self.field(row, rec, col)?.trim() {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            s => Err(format_err(&self.path, format!("row {}: bad flag '{s}'", row + 1))),
        }
    }

    pub fn joint(&self, row: usize, rec: &csv::StringRecord, col: usize) -> Result<Joint> {
        let s = self.field(row, rec, col)?;
        Joint::parse(s).ok_or_else(|| format_err(&self.path, format!("row {}: bad joint '{s}'", row + 1)))
    }

    fn vec3(&self, row: usize, rec: &csv::StringRecord, cols: [usize; 3]) -> Result<Vec3<f64>> {
        Ok(Vec3::new(
            self.f64(row, rec, cols[0])?,
            self.f64(row, rec, cols[1])?,
            self.f64(row, rec, cols[2])?,
        ))
    }

    fn quat(&self, row: usize, rec: &csv::StringRecord, cols: [usize; 4]) -> Result<Quaternion<f64>> {
        Ok(Quaternion::new(
            self.f64(row, rec, cols[0])?,
            self.f64(row, rec, cols[1])?,
            self.f64(row, rec, cols[2])?,
            self.f64(row, rec, cols[3])?,
        ))
    }

    fn joints(&self, row: usize, rec: &csv::StringRecord, cols: &[[usize; 3]; 3]) -> Result<[Vec3<f64>; 3]> {
        Ok([
            self.vec3(row, rec, cols[0])?,
            self.vec3(row, rec, cols[1])?,
            self.vec3(row, rec, cols[2])?,
        ])
    }

    fn joint_columns(&self) -> Result<[[usize; 3]; 3]> {
        Ok([
            self.columns(vec_cols("hip"))?,
            self.columns(vec_cols("knee"))?,
            self.columns(vec_cols("ankle"))?,
        ])
    }
}

const IMU_HEADER: [&str; 10] = ["t", "gx", "gy", "gz", "ax", "ay", "az", "mx", "my", "mz"];

pub fn write_imu(path: &Path, samples: &[ImuSample<f64>]) -> Result<()> {
    let header: Vec<String> = IMU_HEADER.iter().map(|s| s.to_string()).collect();
    let rows = samples.iter().map(|s| {
        let mut r = vec![num(s.t)];
        push_vec(&mut r, s.gyro);
        push_vec(&mut r, s.accel);
        push_vec(&mut r, s.mag);
        r
    });
    write_table(path, "imu", &[], &header, rows)
}

pub fn read_imu(path: &Path) -> Result<Vec<ImuSample<f64>>> {
    let t = Table::read(path, "imu")?;
    let c = t.columns(IMU_HEADER.map(String::from))?;
    t.records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(ImuSample {
                t: t.f64(i, r, c[0])?,
                gyro: t.vec3(i, r, [c[1], c[2], c[3]])?,
                accel: t.vec3(i, r, [c[4], c[5], c[6]])?,
                mag: t.vec3(i, r, [c[7], c[8], c[9]])?,
            })
        })
        .collect()
}

const MARKER_HEADER: [&str; 6] = ["t", "joint", "u", "v", "area_px", "valid"];

/// One row per joint per frame.
pub fn write_markers(path: &Path, frames: &[[MarkerObservation; 3]]) -> Result<()> {
    let header: Vec<String> = MARKER_HEADER.iter().map(|s| s.to_string()).collect();
    let rows = frames.iter().flatten().map(|o| {
        vec![
            num(o.t),
            o.joint.name().to_string(),
            num(o.pixel.0),
            num(o.pixel.1),
            num(o.area_px),
            flag(o.valid),
        ]
    });
    write_table(path, "markers", &[], &header, rows)
}

/// Groups rows back into frames; each frame needs all three joints.
pub fn read_markers(path: &Path) -> Result<Vec<[MarkerObservation; 3]>> {
    let t = Table::read(path, "markers")?;
    let c = t.columns(MARKER_HEADER.map(String::from))?;
    let mut frames: Vec<[MarkerObservation; 3]> = Vec::new();
    let mut pending: [Option<MarkerObservation>; 3] = [None; 3];
    for (i, r) in t.records.iter().enumerate() {
        let obs = MarkerObservation {
            t: t.f64(i, r, c[0])?,
            joint: t.joint(i, r, c[1])?,
            pixel: (t.f64(i, r, c[2])?, t.f64(i, r, c[3])?),
            area_px: t.f64(i, r, c[4])?,
            valid: t.flag(i, r, c[5])?,
        };
        if let Some(prev) = pending.iter().flatten().next() {
            if prev.t != obs.t {
                return Err(format_err(path, format!("row {}: incomplete frame at t={}", i + 1, prev.t)));
            }
        }
        let slot = &mut pending[obs.joint.index()];
        if slot.is_some() {
            return Err(format_err(path, format!("row {}: duplicate {}", i + 1, obs.joint.name())));
        }
        *slot = Some(obs);
        if let [Some(a), Some(b), Some(c)] = pending {
            frames.push([a, b, c]);
            pending = [None; 3];
        }
    }
    if pending.iter().any(Option::is_some) {
        return Err(format_err(path, "trailing incomplete frame"));
    }
    Ok(frames)
}

const JOINTS3D_HEADER: [&str; 7] = ["t", "joint", "x", "y", "z", "valid", "filled"];

pub fn write_joints3d(path: &Path, frames: &[CameraFrame3d]) -> Result<()> {
    let header: Vec<String> = JOINTS3D_HEADER.iter().map(|s| s.to_string()).collect();
    let rows = frames.iter().flat_map(|f| {
        Joint::ALL.map(|j| {
            let k = j.index();
            let mut r = vec![num(f.t), j.name().to_string()];
            push_vec(&mut r, f.joints[k]);
            r.push(flag(f.valid[k]));
            r.push(flag(f.filled[k]));
            r
        })
    });
    write_table(path, "joints3d", &[], &header, rows)
}

const ESTIMATE_KIND: &str = "estimate";

fn estimate_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(joint_cols());
    h.extend(quat_cols("q_u"));
    h.extend(quat_cols("q_l"));
    h.extend(vec_cols("b_u"));
    h.extend(vec_cols("b_l"));
    h.push("gated_u".into());
    h.push("gated_l".into());
    h
}

pub fn write_estimate(path: &Path, variant: Variant, rows: &[EstimateRow]) -> Result<()> {
    let rows = rows.iter().map(|e| {
        let mut r = vec![num(e.t)];
        for j in e.joints {
            push_vec(&mut r, j);
        }
        push_quat(&mut r, e.q[0]);
        push_quat(&mut r, e.q[1]);
        push_vec(&mut r, e.bias[0]);
        push_vec(&mut r, e.bias[1]);
        r.push(flag(e.gated[0]));
        r.push(flag(e.gated[1]));
        r
    });
    write_table(path, ESTIMATE_KIND, &[("variant", variant.name())], &estimate_header(), rows)
}

/// Returns the variant tag (if any) with the rows.
pub fn read_estimate(path: &Path) -> Result<(Option<String>, Vec<EstimateRow>)> {
    let t = Table::read(path, ESTIMATE_KIND)?;
    let jc = t.joint_columns()?;
    let qu = t.columns(quat_cols("q_u"))?;
    let ql = t.columns(quat_cols("q_l"))?;
    let bu = t.columns(vec_cols("b_u"))?;
    let bl = t.columns(vec_cols("b_l"))?;
    let [tc, gu, gl] = t.columns(["t", "gated_u", "gated_l"].map(String::from))?;
    let rows = t
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(EstimateRow {
                t: t.f64(i, r, tc)?,
                joints: t.joints(i, r, &jc)?,
                q: [t.quat(i, r, qu)?, t.quat(i, r, ql)?],
                bias: [t.vec3(i, r, bu)?, t.vec3(i, r, bl)?],
                gated: [t.flag(i, r, gu)?, t.flag(i, r, gl)?],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((t.tags.get("variant").cloned(), rows))
}

fn truth_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(joint_cols());
    h.extend(quat_cols("q_u"));
    h.extend(quat_cols("q_l"));
    h.extend(vec_cols("w_u"));
    h.extend(vec_cols("w_l"));
    h.extend(vec_cols("b_u"));
    h.extend(vec_cols("b_l"));
    h
}

/// Ground truth at the IMU rate, with the true gyro biases.
pub fn write_truth(path: &Path, truth: &[TruthStep], imu: &ImuStreams) -> Result<()> {
    if truth.len() != imu.bias.len() {
        return Err(format_err(path, "truth and bias lengths differ"));
    }
    let rows = truth.iter().zip(&imu.bias).map(|(s, b)| {
        let mut r = vec![num(s.t)];
        for j in s.joints {
            push_vec(&mut r, j);
        }
        push_quat(&mut r, s.q[0]);
        push_quat(&mut r, s.q[1]);
        push_vec(&mut r, s.omega[0]);
        push_vec(&mut r, s.omega[1]);
        push_vec(&mut r, b[0]);
        push_vec(&mut r, b[1]);
        r
    });
    write_table(path, "truth", &[], &truth_header(), rows)
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRow>> {
    let t = Table::read(path, "truth")?;
    let jc = t.joint_columns()?;
    let tc = t.column("t")?;
    t.records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(TruthRow {
                t: t.f64(i, r, tc)?,
                joints: t.joints(i, r, &jc)?,
            })
        })
        .collect()
}

/// One line of an RMSE report.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseRecord {
    pub variant: String,
    /// Joint name, or `all`.
    pub joint: String,
    /// `NaN` on the pooled row.
    pub axis_cm: [f64; 3],
    pub norm_cm: f64,
    /// Relative to the first listed estimate, percent; empty for that one.
    pub change_pct: Option<f64>,
    pub samples: usize,
}

pub fn write_rmse(path: &Path, records: &[RmseRecord]) -> Result<()> {
    let header: Vec<String> = ["variant", "joint", "x_cm", "y_cm", "z_cm", "norm_cm", "change_pct", "samples"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = records.iter().map(|r| {
        let axis = r.axis_cm.map(|v| if v.is_nan() { String::new() } else { num(v) });
        vec![
            r.variant.clone(),
            r.joint.clone(),
            axis[0].clone(),
            axis[1].clone(),
            axis[2].clone(),
            num(r.norm_cm),
            r.change_pct.map(num).unwrap_or_default(),
            r.samples.to_string(),
        ]
    });
    write_table(path, "rmse", &[], &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imu_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("imu.csv");
        let s = vec![ImuSample {
            t: 0.01,
            gyro: Vec3::new(0.1, -0.2, 1.0 / 3.0),
            accel: Vec3::new(0.0, 1e-17, -9.81),
            mag: Vec3::new(0.5, 0.0, 0.866),
        }];
        write_imu(&p, &s).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# legtrack imu v1\nt,gx,"));
        assert_eq!(read_imu(&p).unwrap(), s);
    }

    #[test]
    fn wrong_kind_and_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_imu(&p, &[]).unwrap();
        assert!(read_truth(&p).is_err());
        std::fs::write(&p, "# legtrack imu v9\nt\n").unwrap();
        assert!(read_imu(&p).is_err());
        std::fs::write(&p, "t,gx\n").unwrap();
        assert!(read_imu(&p).is_err());
    }

    #[test]
    fn bad_number_names_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "# legtrack imu v1\nt,gx,gy,gz,ax,ay,az,mx,my,mz\n0,1,2,3,4,5,6,7,8,oops\n").unwrap();
        let e = read_imu(&p).unwrap_err().to_string();
        assert!(e.contains("row 1") && e.contains("'mz'"), "{e}");
    }

    #[test]
    fn markers_group_into_frames() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let f = |t: f64| {
            Joint::ALL.map(|j| MarkerObservation {
                t,
                joint: j,
                pixel: (10.0 * j.index() as f64, 5.5),
                area_px: 100.0,
                valid: j != Joint::Knee,
            })
        };
        let frames = vec![f(0.0), f(1.0 / 30.0)];
        write_markers(&p, &frames).unwrap();
        assert_eq!(read_markers(&p).unwrap(), frames);
    }
}
