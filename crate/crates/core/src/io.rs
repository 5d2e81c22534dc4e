//! Binary containers, JSON sidecars and CSV exports.
//!
//! All binary formats are little endian. Complex values are `(re, im)` pairs
//! stored as `f64` or `f32` depending on the precision byte (8 or 4).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use faer::Mat;
use num_complex::Complex64 as c64;
use serde::{Deserialize, Serialize};

use crate::channel_model::{Dataset, ScenarioConfig};
use crate::error::{Error, Result};
use crate::gmm::{FitLog, GmmModel};
use crate::linalg::CMat;
use crate::pilot_design::{PilotCodebook, PilotMatrix};

pub const DATASET_MAGIC: &[u8; 6] = b"FDDPL1";
pub const PILOT_MAGIC: &[u8; 6] = b"FDDPM1";
pub const GMM_MAGIC: &[u8; 7] = b"FDDGMM1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    fn byte(self) -> u8 {
        match self {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            4 => Ok(Precision::Single),
            8 => Ok(Precision::Double),
            _ => Err(Error::Format(format!("unknown precision byte {b}"))),
        }
    }
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        Ok(self.0.write_all(b)?)
    }
    fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn complex(&mut self, z: c64, p: Precision) -> Result<()> {
        match p {
            Precision::Double => {
                self.f64(z.re)?;
                self.f64(z.im)
            }
            Precision::Single => {
                self.bytes(&(z.re as f32).to_le_bytes())?;
                self.bytes(&(z.im as f32).to_le_bytes())
            }
        }
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|e| Error::Format(format!("truncated file: {e}")))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn complex(&mut self, p: Precision) -> Result<c64> {
        Ok(match p {
            Precision::Double => c64::new(self.f64()?, self.f64()?),
            Precision::Single => {
                let re = f32::from_le_bytes(self.array()?);
                let im = f32::from_le_bytes(self.array()?);
                c64::new(re as f64, im as f64)
            }
        })
    }
    fn expect_magic(&mut self, magic: &[u8]) -> Result<()> {
        let mut b = vec![0u8; magic.len()];
        self.0
            .read_exact(&mut b)
            .map_err(|_| Error::Format("file too short for header".into()))?;
        if b != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&b),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }
    fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.0.read(&mut b)? {
            0 => Ok(()),
            _ => Err(Error::Format("trailing bytes after payload".into())),
        }
    }
}

fn create(path: &Path) -> Result<Writer<BufWriter<File>>> {
    Ok(Writer(BufWriter::new(File::create(path)?)))
}

fn open(path: &Path) -> Result<Reader<BufReader<File>>> {
    Ok(Reader(BufReader::new(File::open(path)?)))
}

/// Channel geometry needed to regenerate per-sample statistics.
#[derive(Clone, Debug)]
pub struct DatasetFile {
    pub data: Dataset,
    pub spread_tx_deg: f64,
    pub spread_rx_deg: f64,
    pub quad_points: usize,
}

impl DatasetFile {
    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            n_tx: self.data.n_tx,
            n_rx: self.data.n_rx,
            n_pilots: 1,
            spread_tx_deg: self.spread_tx_deg,
            spread_rx_deg: self.spread_rx_deg,
            quad_points: self.quad_points,
            n_clusters: self.data.delta.first().map_or(1, |d| (d.len() / 2).max(1)),
            ..Default::default()
        }
    }
}

/// Header: magic, precision, `N_tx`, `N_rx` (u32), `M` (u64), angles per
/// sample (u32), tx/rx spreads (f64), quadrature points (u32). Payload: `M`
/// vectorized channels, then `M` angle lists as f64.
pub fn write_dataset(path: &Path, data: &Dataset, cfg: &ScenarioConfig, p: Precision) -> Result<()> {
    let mut w = create(path)?;
    let nd = data.delta.first().map_or(0, |d| d.len());
    w.bytes(DATASET_MAGIC)?;
    w.u8(p.byte())?;
    w.u32(data.n_tx)?;
    w.u32(data.n_rx)?;
    w.u64(data.len() as u64)?;
    w.u32(nd)?;
    w.f64(cfg.spread_tx_deg)?;
    w.f64(cfg.spread_rx_deg)?;
    w.u32(cfg.quad_points)?;
    for m in 0..data.len() {
        for i in 0..data.h.nrows() {
            w.complex(data.h[(i, m)], p)?;
        }
    }
    for d in &data.delta {
        if d.len() != nd {
            return Err(Error::Format("angle lists differ in length".into()));
        }
        for &a in d {
            w.f64(a)?;
        }
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    let mut r = open(path)?;
    r.expect_magic(DATASET_MAGIC)?;
    let p = Precision::from_byte(r.u8()?)?;
    let n_tx = r.u32()?;
    let n_rx = r.u32()?;
    let m = r.u64()? as usize;
    let nd = r.u32()?;
    let spread_tx_deg = r.f64()?;
    let spread_rx_deg = r.f64()?;
    let quad_points = r.u32()?;
    let n = n_tx * n_rx;
    let mut h = Mat::<c64>::zeros(n, m);
    for j in 0..m {
        for i in 0..n {
            h[(i, j)] = r.complex(p)?;
        }
    }
    let mut delta = Vec::with_capacity(m);
    for _ in 0..m {
        delta.push((0..nd).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
    }
    r.expect_eof()?;
    Ok(DatasetFile {
        data: Dataset { n_tx, n_rx, h, delta },
        spread_tx_deg,
        spread_rx_deg,
        quad_points,
    })
}

/// Header: magic, precision, count, `n_p`, `N_tx` (u32). Each entry: `rho`
/// (f64) then the matrix column by column.
pub fn write_pilots(path: &Path, pilots: &[PilotMatrix], p: Precision) -> Result<()> {
    let first = pilots.first().ok_or_else(|| Error::Format("no pilots to write".into()))?;
    let (np, nt) = first.p.shape();
    let mut w = create(path)?;
    w.bytes(PILOT_MAGIC)?;
    w.u8(p.byte())?;
    w.u32(pilots.len())?;
    w.u32(np)?;
    w.u32(nt)?;
    for pm in pilots {
        if pm.p.shape() != (np, nt) {
            return Err(Error::Format("pilot shapes differ".into()));
        }
        w.f64(pm.rho)?;
        for j in 0..nt {
            for i in 0..np {
                w.complex(pm.p[(i, j)], p)?;
            }
        }
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_pilots(path: &Path) -> Result<Vec<PilotMatrix>> {
    let mut r = open(path)?;
    r.expect_magic(PILOT_MAGIC)?;
    let p = Precision::from_byte(r.u8()?)?;
    let count = r.u32()?;
    let np = r.u32()?;
    let nt = r.u32()?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let rho = r.f64()?;
        let mut m = Mat::<c64>::zeros(np, nt);
        for j in 0..nt {
            for i in 0..np {
                m[(i, j)] = r.complex(p)?;
            }
        }
        out.push(PilotMatrix::new(m, rho));
    }
    r.expect_eof()?;
    Ok(out)
}

pub fn write_codebook(path: &Path, cb: &PilotCodebook) -> Result<()> {
    write_pilots(path, &cb.entries, Precision::Double)
}

pub fn read_codebook(path: &Path) -> Result<PilotCodebook> {
    Ok(PilotCodebook { entries: read_pilots(path)? })
}

fn write_lower<W: Write>(w: &mut Writer<W>, c: &CMat) -> Result<()> {
    for j in 0..c.ncols() {
        for i in j..c.nrows() {
            w.complex(c[(i, j)], Precision::Double)?;
        }
    }
    Ok(())
}

fn read_lower<R: Read>(r: &mut Reader<R>, n: usize) -> Result<CMat> {
    let mut c = Mat::<c64>::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let z = r.complex(Precision::Double)?;
            c[(i, j)] = z;
            c[(j, i)] = z.conj();
        }
        c[(j, j)] = c64::new(c[(j, j)].re, 0.0);
    }
    Ok(c)
}

/// Header: magic, `K_tx`, `K_rx`, `N_tx`, `N_rx` (u32). Payload: `K` weights
/// (f64), then each tx covariance and each rx covariance as its packed lower
/// triangle (column by column, complex128).
pub fn write_gmm(path: &Path, model: &GmmModel) -> Result<()> {
    let mut w = create(path)?;
    w.bytes(GMM_MAGIC)?;
    w.u32(model.k_tx())?;
    w.u32(model.k_rx())?;
    w.u32(model.n_tx)?;
    w.u32(model.n_rx)?;
    for &x in &model.weights {
        w.f64(x)?;
    }
    for c in model.cov_tx.iter().chain(&model.cov_rx) {
        write_lower(&mut w, c)?;
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_gmm(path: &Path) -> Result<GmmModel> {
    let mut r = open(path)?;
    r.expect_magic(GMM_MAGIC)?;
    let k_tx = r.u32()?;
    let k_rx = r.u32()?;
    let n_tx = r.u32()?;
    let n_rx = r.u32()?;
    let weights = (0..k_tx * k_rx).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let cov_tx = (0..k_tx).map(|_| read_lower(&mut r, n_tx)).collect::<Result<Vec<_>>>()?;
    let cov_rx = (0..k_rx).map(|_| read_lower(&mut r, n_rx)).collect::<Result<Vec<_>>>()?;
    r.expect_eof()?;
    let mut m = GmmModel::new(weights, cov_tx, cov_rx)?;
    if let Ok(meta) = read_gmm_meta(&sidecar_path(path)) {
        m.fit_log = meta.fit_log;
    }
    Ok(m)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GmmMeta {
    pub k_tx: usize,
    pub k_rx: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    pub scenario: Option<ScenarioConfig>,
    pub fit_log: FitLog,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_gmm_meta(path: &Path, model: &GmmModel, scenario: Option<&ScenarioConfig>) -> Result<()> {
    let meta = GmmMeta {
        k_tx: model.k_tx(),
        k_rx: model.k_rx(),
        n_tx: model.n_tx,
        n_rx: model.n_rx,
        scenario: scenario.cloned(),
        fit_log: model.fit_log.clone(),
    };
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, &meta)?;
    Ok(())
}

pub fn read_gmm_meta(path: &Path) -> Result<GmmMeta> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// One row per sample: index followed by interleaved re/im entries.
pub fn export_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = data.h.nrows();
    let mut header = vec!["sample".to_string()];
    for i in 0..n {
        header.push(format!("re{i}"));
        header.push(format!("im{i}"));
    }
    w.write_record(&header)?;
    for m in 0..data.len() {
        let mut row = vec![m.to_string()];
        for i in 0..n {
            let z = data.h[(i, m)];
            row.push(format!("{:e}", z.re));
            row.push(format!("{:e}", z.im));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per pilot row: entry index, row index, interleaved re/im entries.
pub fn export_pilots_csv(path: &Path, pilots: &[PilotMatrix]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let nt = pilots.first().map_or(0, |p| p.n_tx());
    let mut header = vec!["entry".to_string(), "row".to_string()];
    for c in 0..nt {
        header.push(format!("re{c}"));
        header.push(format!("im{c}"));
    }
    w.write_record(&header)?;
    for (k, p) in pilots.iter().enumerate() {
        for i in 0..p.n_p() {
            let mut row = vec![k.to_string(), i.to_string()];
            for c in 0..p.n_tx() {
                row.push(format!("{:e}", p.p[(i, c)].re));
                row.push(format!("{:e}", p.p[(i, c)].im));
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
