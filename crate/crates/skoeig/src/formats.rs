//! On-disk artifacts. Every file carries the hash of the stage that wrote it:
//! CSV files as a leading `# config_hash=<hex>` line, binary files in their
//! header. Floats are written in shortest round-trip form, so reading a file
//! back gives the bitwise values that were written.

use anyhow::{anyhow, bail, ensure, Context, Result};
use skoeig_core::collocation::CollocationSets;
use skoeig_core::density::DensityMatrix;
use skoeig_core::pinn::{HistoryEntry, LossTerms, Mlp};
use skoeig_core::simulate::DivergenceTally;
use skoeig_core::spectral::EigenEstimate;
use skoeig_core::{Complex64, Kind};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const DENSITY_MAGIC: &[u8; 8] = b"SKODMAT1";
pub const PARAMS_MAGIC: &[u8; 8] = b"SKOPINN1";
pub const PARAMS_VERSION: u32 = 1;

/// Writes through a temporary file renamed into place, so an interrupted
/// stage never leaves a truncated artifact under the final name.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.part",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let file = File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path).with_context(|| format!("moving {} into place", path.display()))?;
    Ok(())
}

/// A CSV file with `# key=value` metadata lines ahead of the header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: BTreeMap<String, String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(hash: &str, header: &[&str]) -> Self {
        let mut meta = BTreeMap::new();
        meta.insert("config_hash".to_string(), hash.to_string());
        Self {
            meta,
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn hash(&self) -> Option<&str> {
        self.meta.get("config_hash").map(String::as_str)
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        let v = self.meta.get(key).ok_or_else(|| anyhow!("missing `{key}` metadata"))?;
        v.parse().with_context(|| format!("bad `{key}` metadata {v:?}"))
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("missing column `{name}`"))
    }

    pub fn f64_column(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .map(|r| r[c].parse::<f64>().with_context(|| format!("column `{name}`: {:?}", r[c])))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| {
            // config_hash first, then the rest in key order
            if let Some(h) = self.hash() {
                writeln!(w, "# config_hash={h}")?;
            }
            for (k, v) in self.meta.iter().filter(|(k, _)| *k != "config_hash") {
                writeln!(w, "# {k}={v}")?;
            }
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(&self.header)?;
            for r in &self.rows {
                csv.write_record(r)?;
            }
            csv.flush()?;
            Ok(())
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut meta = BTreeMap::new();
        let mut body = 0;
        for line in text.lines() {
            let Some(rest) = line.strip_prefix('#') else { break };
            body += line.len() + 1;
            if let Some((k, v)) = rest.trim().split_once('=') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let mut rdr = csv::Reader::from_reader(&text.as_bytes()[body.min(text.len())..]);
        let header = rdr.headers()?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("parsing {}", path.display()))?;
        Ok(Self { meta, header, rows })
    }
}

pub fn fmt(v: f64) -> String {
    format!("{v}")
}

fn coord_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{prefix}{k}")).collect()
}

fn table_with(hash: &str, header: Vec<String>) -> Table {
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    Table::new(hash, &h)
}

/// `X` as `box_id, x0, x1, ...` (box centers).
pub fn write_training(path: &Path, hash: &str, sets: &CollocationSets, trajectory_boxes: usize) -> Result<()> {
    let dim = sets.training.first().map_or(0, Vec::len);
    let mut header = vec!["box_id".to_string()];
    header.extend(coord_names("x", dim));
    let mut t = table_with(hash, header);
    t.meta.insert("trajectory_boxes".into(), trajectory_boxes.to_string());
    for (id, p) in sets.box_ids.iter().zip(&sets.training) {
        let mut row = vec![id.to_string()];
        row.extend(p.iter().map(|&v| fmt(v)));
        t.rows.push(row);
    }
    t.write(path)
}

pub fn read_training(path: &Path) -> Result<(String, Vec<u64>, Vec<Vec<f64>>)> {
    let t = Table::read(path)?;
    let hash = t.hash().unwrap_or_default().to_string();
    let mut ids = Vec::with_capacity(t.rows.len());
    let mut pts = Vec::with_capacity(t.rows.len());
    for r in &t.rows {
        ids.push(r[0].parse()?);
        pts.push(r[1..].iter().map(|v| v.parse()).collect::<std::result::Result<Vec<f64>, _>>()?);
    }
    Ok((hash, ids, pts))
}

/// Raw points as `x0, x1, ...`.
pub fn write_points(path: &Path, hash: &str, points: &[Vec<f64>]) -> Result<()> {
    let dim = points.first().map_or(0, Vec::len);
    let mut t = table_with(hash, coord_names("x", dim));
    t.rows = points.iter().map(|p| p.iter().map(|&v| fmt(v)).collect()).collect();
    t.write(path)
}

pub fn read_points(path: &Path) -> Result<(String, Vec<Vec<f64>>)> {
    let t = Table::read(path)?;
    let pts = t
        .rows
        .iter()
        .map(|r| r.iter().map(|v| v.parse()).collect::<std::result::Result<Vec<f64>, _>>())
        .collect::<std::result::Result<_, _>>()?;
    Ok((t.hash().unwrap_or_default().to_string(), pts))
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64s(w: &mut impl Write, v: &[f64]) -> Result<()> {
    put_u64(w, v.len() as u64)?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_len(r: &mut impl Read, limit: u64) -> Result<usize> {
    let n = get_u64(r)?;
    ensure!(n <= limit, "length field {n} is implausible");
    Ok(n as usize)
}

fn get_f64s(r: &mut impl Read) -> Result<Vec<f64>> {
    let n = get_len(r, 1 << 36)?;
    (0..n).map(|_| get_f64(r)).collect()
}

fn get_str(r: &mut impl Read) -> Result<String> {
    let n = get_len(r, 1 << 16)?;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    Ok(String::from_utf8(b)?)
}

fn check_magic(r: &mut impl Read, magic: &[u8; 8], path: &Path) -> Result<()> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    if &b != magic {
        bail!("{} is not a {} file", path.display(), String::from_utf8_lossy(magic));
    }
    Ok(())
}

/// Little-endian layout: magic, hash, kind byte, `n_t`, `n_x`, `K`, `delta`,
/// launched and diverged counts, times, row-major values, reference trace.
pub fn write_density(path: &Path, hash: &str, d: &DensityMatrix) -> Result<()> {
    write_atomic(path, |w| {
        w.write_all(DENSITY_MAGIC)?;
        put_str(w, hash)?;
        w.write_all(&[match d.kind {
            Kind::Forward => 0u8,
            Kind::Backward => 1u8,
        }])?;
        put_u64(w, d.n_t as u64)?;
        put_u64(w, d.n_x as u64)?;
        put_u64(w, d.k)?;
        w.write_all(&d.delta.to_le_bytes())?;
        put_u64(w, d.tally.total)?;
        put_u64(w, d.tally.diverged)?;
        put_f64s(w, &d.times)?;
        put_f64s(w, &d.values)?;
        put_f64s(w, &d.reference_mass)?;
        Ok(())
    })
}

pub fn read_density(path: &Path) -> Result<(String, DensityMatrix)> {
    let mut r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    check_magic(&mut r, DENSITY_MAGIC, path)?;
    let hash = get_str(&mut r)?;
    let mut kind = [0u8];
    r.read_exact(&mut kind)?;
    let kind = match kind[0] {
        0 => Kind::Forward,
        1 => Kind::Backward,
        k => bail!("unknown density kind {k}"),
    };
    let n_t = get_u64(&mut r)? as usize;
    let n_x = get_u64(&mut r)? as usize;
    let k = get_u64(&mut r)?;
    let delta = get_f64(&mut r)?;
    let tally = DivergenceTally {
        total: get_u64(&mut r)?,
        diverged: get_u64(&mut r)?,
    };
    let times = get_f64s(&mut r)?;
    let values = get_f64s(&mut r)?;
    let reference_mass = get_f64s(&mut r)?;
    ensure!(
        times.len() == n_t && values.len() == n_t * n_x,
        "{}: matrix shape does not match its header",
        path.display()
    );
    Ok((
        hash,
        DensityMatrix {
            kind,
            n_t,
            n_x,
            values,
            times,
            k,
            delta,
            tally,
            reference_mass,
        },
    ))
}

/// Long-format CSV export of a density matrix: `slice, t, box_id, value`.
pub fn write_density_csv(path: &Path, hash: &str, d: &DensityMatrix, ids: &[u64]) -> Result<()> {
    let mut t = Table::new(hash, &["slice", "t", "box_id", "value"]);
    t.meta.insert("kind".into(), d.kind.as_str().into());
    t.meta.insert("k".into(), d.k.to_string());
    t.meta.insert("delta".into(), fmt(d.delta));
    for s in 0..d.n_t {
        for (i, id) in ids.iter().enumerate() {
            t.rows
                .push(vec![s.to_string(), fmt(d.times[s]), id.to_string(), fmt(d.get(s, i))]);
        }
    }
    t.write(path)
}

/// Eigenfunction values per training point: `box_id, x.., re_k, im_k.., residual`,
/// eigenvalues as `eigenvalue_k` metadata.
pub fn write_eigen(path: &Path, hash: &str, est: &EigenEstimate, ids: &[u64], points: &[Vec<f64>]) -> Result<()> {
    let dim = points.first().map_or(0, Vec::len);
    let mut header = vec!["box_id".to_string()];
    header.extend(coord_names("x", dim));
    for m in 1..=est.modes() {
        header.push(format!("re_{m}"));
        header.push(format!("im_{m}"));
    }
    header.push("residual".into());
    let mut t = table_with(hash, header);
    t.meta.insert("kind".into(), est.kind.as_str().into());
    t.meta.insert("t_start".into(), fmt(est.window.0));
    t.meta.insert("t_end".into(), fmt(est.window.1));
    for (m, l) in est.eigenvalues.iter().enumerate() {
        t.meta.insert(format!("eigenvalue_{}", m + 1), format!("{} {}", fmt(l.re), fmt(l.im)));
    }
    for (i, (id, p)) in ids.iter().zip(points).enumerate() {
        let mut row = vec![id.to_string()];
        row.extend(p.iter().map(|&v| fmt(v)));
        for m in 0..est.modes() {
            let v = est.value(i, m);
            row.push(fmt(v.re));
            row.push(fmt(v.im));
        }
        row.push(fmt(est.residuals[i]));
        t.rows.push(row);
    }
    t.write(path)
}

fn parse_complex(s: &str) -> Result<Complex64> {
    let mut it = s.split_whitespace();
    let re = it.next().ok_or_else(|| anyhow!("empty complex value"))?.parse()?;
    let im = it.next().ok_or_else(|| anyhow!("complex value {s:?} lacks an imaginary part"))?.parse()?;
    Ok(Complex64::new(re, im))
}

pub fn read_eigen(path: &Path) -> Result<(String, EigenEstimate, Vec<u64>, Vec<Vec<f64>>)> {
    let t = Table::read(path)?;
    let kind = match t.meta.get("kind").map(String::as_str) {
        Some("forward") => Kind::Forward,
        Some("backward") => Kind::Backward,
        other => bail!("bad eigenfunction kind {other:?}"),
    };
    let mut eigenvalues = Vec::new();
    while let Some(v) = t.meta.get(&format!("eigenvalue_{}", eigenvalues.len() + 1)) {
        eigenvalues.push(parse_complex(v)?);
    }
    let m = eigenvalues.len();
    let dim = t.header.len() - 2 - 2 * m;
    let mut ids = Vec::new();
    let mut points = Vec::new();
    let mut values = Vec::new();
    let mut residuals = Vec::new();
    for r in &t.rows {
        ids.push(r[0].parse()?);
        points.push(r[1..=dim].iter().map(|v| v.parse()).collect::<std::result::Result<Vec<f64>, _>>()?);
        for k in 0..m {
            values.push(Complex64::new(r[1 + dim + 2 * k].parse()?, r[2 + dim + 2 * k].parse()?));
        }
        residuals.push(r[r.len() - 1].parse()?);
    }
    let est = EigenEstimate {
        kind,
        eigenvalues,
        values,
        window: (t.meta_f64("t_start")?, t.meta_f64("t_end")?),
        residuals,
    };
    Ok((t.hash().unwrap_or_default().to_string(), est, ids, points))
}

/// Magic, version, hash, widths, input box, parameter payload.
pub fn write_params(path: &Path, hash: &str, net: &Mlp) -> Result<()> {
    write_atomic(path, |w| {
        w.write_all(PARAMS_MAGIC)?;
        w.write_all(&PARAMS_VERSION.to_le_bytes())?;
        put_str(w, hash)?;
        put_u64(w, net.widths.len() as u64)?;
        for &n in &net.widths {
            put_u64(w, n as u64)?;
        }
        put_f64s(w, &net.low)?;
        put_f64s(w, &net.high)?;
        put_f64s(w, &net.params)?;
        Ok(())
    })
}

pub fn read_params(path: &Path) -> Result<(String, Mlp)> {
    let mut r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    check_magic(&mut r, PARAMS_MAGIC, path)?;
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    ensure!(version == PARAMS_VERSION, "unsupported parameter file version {version}");
    let hash = get_str(&mut r)?;
    let layers = get_len(&mut r, 1024)?;
    let widths = (0..layers)
        .map(|_| get_len(&mut r, 1 << 20))
        .collect::<Result<Vec<_>>>()?;
    let low = get_f64s(&mut r)?;
    let high = get_f64s(&mut r)?;
    let params = get_f64s(&mut r)?;
    let net = Mlp {
        widths,
        params,
        low,
        high,
    };
    net.validate().map_err(|e| anyhow!("{}: {e}", path.display()))?;
    Ok((hash, net))
}

fn push_terms(row: &mut Vec<String>, t: Option<&LossTerms>) {
    match t {
        Some(t) => row.extend([t.residual_re, t.residual_im, t.data_re, t.data_im].map(fmt)),
        None => row.extend(std::iter::repeat_n(String::new(), 4)),
    }
}

/// One row per epoch and phase (`pretrain` or `train`).
pub fn write_history(path: &Path, hash: &str, phases: &[(&str, &[HistoryEntry])]) -> Result<()> {
    let mut t = Table::new(
        hash,
        &[
            "phase",
            "epoch",
            "iteration",
            "residual_re",
            "residual_im",
            "data_re",
            "data_im",
            "full_residual_re",
            "full_residual_im",
            "full_data_re",
            "full_data_im",
        ],
    );
    for (phase, entries) in phases {
        for e in *entries {
            let mut row = vec![phase.to_string(), e.epoch.to_string(), e.iteration.to_string()];
            push_terms(&mut row, Some(&e.batch));
            push_terms(&mut row, e.full.as_ref());
            t.rows.push(row);
        }
    }
    t.write(path)
}

/// Field samples: coordinates, `re, im, abs, arg` with `arg` in `(-pi, pi]`.
pub fn field_table(hash: &str, coord_names: &[&str], points: &[Vec<f64>], values: &[Complex64]) -> Table {
    let mut header: Vec<&str> = coord_names.to_vec();
    header.extend(["re", "im", "abs", "arg"]);
    let mut t = Table::new(hash, &header);
    for (p, v) in points.iter().zip(values) {
        let mut row: Vec<String> = p.iter().map(|&x| fmt(x)).collect();
        row.extend([v.re, v.im, v.norm(), principal_arg(*v)].map(fmt));
        t.rows.push(row);
    }
    t
}

/// `atan2` returns `-pi` for a negative real part with `-0.0` imaginary part;
/// this maps it onto `pi`.
pub fn principal_arg(v: Complex64) -> f64 {
    let a = v.im.atan2(v.re);
    if a <= -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use skoeig_core::Kind;

    #[test]
    fn density_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let d = DensityMatrix {
            kind: Kind::Forward,
            n_t: 2,
            n_x: 3,
            values: vec![0.1, 1.0 / 3.0, 0.0, 2.5e-300, 7.0, 1e10],
            times: vec![0.5, 1.0],
            k: 40,
            delta: 0.0004,
            tally: DivergenceTally {
                total: 40,
                diverged: 0,
            },
            reference_mass: vec![0.25, 0.125],
        };
        write_density(&path, "abc", &d).unwrap();
        let (h, back) = read_density(&path).unwrap();
        assert_eq!(h, "abc");
        assert_eq!(back, d);
    }

    #[test]
    fn density_rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        std::fs::write(&path, b"NOTADMATxxxxxxxx").unwrap();
        assert!(read_density(&path).is_err());
    }

    #[test]
    fn params_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.bin");
        let net = Mlp::init(vec![2, 5, 2], vec![-2.0, -1.0], vec![2.0, 1.0], 4).unwrap();
        write_params(&path, "h1", &net).unwrap();
        let (h, back) = read_params(&path).unwrap();
        assert_eq!(h, "h1");
        assert_eq!(back, net);
    }

    #[test]
    fn eigen_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let est = EigenEstimate {
            kind: Kind::Backward,
            eigenvalues: vec![Complex64::new(-0.1, 2.0), Complex64::new(-0.4, 4.0)],
            values: vec![
                Complex64::new(0.1, -0.2),
                Complex64::new(0.3, 0.0),
                Complex64::new(1.0 / 7.0, 2.0),
                Complex64::new(-5.0, 1e-17),
            ],
            window: (5.0, 20.0),
            residuals: vec![0.01, 0.02],
        };
        let ids = vec![3, 9];
        let pts = vec![vec![0.5, -0.25], vec![1.0, 1.5]];
        write_eigen(&path, "zz", &est, &ids, &pts).unwrap();
        let (h, back, bids, bpts) = read_eigen(&path).unwrap();
        assert_eq!(h, "zz");
        assert_eq!(back, est);
        assert_eq!(bids, ids);
        assert_eq!(bpts, pts);
    }

    #[test]
    fn table_keeps_hash_first() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = Table::new("deadbeef", &["a", "b"]);
        t.meta.insert("alpha".into(), "1".into());
        t.rows.push(vec!["1".into(), "2".into()]);
        t.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_hash=deadbeef\n"));
        assert_eq!(Table::read(&path).unwrap(), t);
    }

    #[test]
    fn principal_arg_range() {
        let v = Complex64::new(-1.0, -0.0);
        assert_eq!(principal_arg(v), std::f64::consts::PI);
        for k in 0..64 {
            let a = principal_arg(Complex64::from_polar(1.0, k as f64 * 0.3 - 9.0));
            assert!(a > -std::f64::consts::PI && a <= std::f64::consts::PI);
        }
    }
}
