//! CSV export/import (`f0..f{K-1},y,z`) and a compact binary snapshot.

use std::io::{Read, Write};
use std::path::Path;

use super::{DataError, DualTaskDataset, Result, Task};

const SNAPSHOT_MAGIC: &[u8; 4] = b"PMDS";
const SNAPSHOT_VERSION: u32 = 1;

pub fn write_csv(dataset: &DualTaskDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let k = dataset.num_features();
    let mut header: Vec<String> = (0..k).map(|j| format!("f{j}")).collect();
    header.push("y".into());
    header.push("z".into());
    w.write_record(&header)?;
    let (y, z) = (dataset.labels(Task::Utility), dataset.labels(Task::Identity));
    for i in 0..dataset.len() {
        let mut rec: Vec<String> = dataset.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(y[i].to_string());
        rec.push(z[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset CSV. Class counts are `max label + 1` (at least 2) unless
/// given explicitly.
pub fn read_csv(path: impl AsRef<Path>, class_counts: Option<(usize, usize)>) -> Result<DualTaskDataset> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let cols = header.len();
    if cols < 3 || &header[cols - 2] != "y" || &header[cols - 1] != "z" {
        return Err(DataError::Malformed("CSV header must be f0..f{K-1},y,z".into()));
    }
    for (j, h) in header.iter().take(cols - 2).enumerate() {
        if h != format!("f{j}") {
            return Err(DataError::Malformed(format!("unexpected column '{h}' at position {j}")));
        }
    }
    let k = cols - 2;
    let mut features = Vec::new();
    let mut y = Vec::new();
    let mut z = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        for j in 0..k {
            features.push(rec[j].trim().parse::<f64>().map_err(|e| DataError::Malformed(format!("feature: {e}")))?);
        }
        y.push(rec[k].trim().parse::<usize>().map_err(|e| DataError::Malformed(format!("y: {e}")))?);
        z.push(rec[k + 1].trim().parse::<usize>().map_err(|e| DataError::Malformed(format!("z: {e}")))?);
    }
    let infer = |l: &[usize]| l.iter().max().map_or(2, |m| (m + 1).max(2));
    let (ny, nz) = class_counts.unwrap_or((infer(&y), infer(&z)));
    let name = path.file_stem().map_or("csv".into(), |s| s.to_string_lossy().into_owned());
    DualTaskDataset::new(name, k, features, y, z, ny, nz)
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

/// Binary snapshot: magic `PMDS`, version, K, N, class counts, optional seed,
/// name, then little-endian features (`f64`) and labels (`u32`).
pub fn write_snapshot(dataset: &DualTaskDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(SNAPSHOT_MAGIC)?;
    put_u32(&mut w, SNAPSHOT_VERSION)?;
    put_u64(&mut w, dataset.num_features() as u64)?;
    put_u64(&mut w, dataset.len() as u64)?;
    put_u32(&mut w, dataset.num_classes(Task::Utility) as u32)?;
    put_u32(&mut w, dataset.num_classes(Task::Identity) as u32)?;
    match dataset.seed() {
        Some(s) => {
            w.write_all(&[1])?;
            put_u64(&mut w, s)?;
        }
        None => {
            w.write_all(&[0])?;
            put_u64(&mut w, 0)?;
        }
    }
    let name = dataset.name().as_bytes();
    put_u32(&mut w, name.len() as u32)?;
    w.write_all(name)?;
    for v in dataset.features() {
        w.write_all(&v.to_le_bytes())?;
    }
    for task in [Task::Utility, Task::Identity] {
        for &l in dataset.labels(task) {
            put_u32(&mut w, l as u32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<DualTaskDataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != SNAPSHOT_MAGIC {
        return Err(DataError::Malformed("not a dataset snapshot".into()));
    }
    let version = cur.u32()?;
    if version != SNAPSHOT_VERSION {
        return Err(DataError::Malformed(format!("unsupported snapshot version {version}")));
    }
    let k = cur.u64()? as usize;
    let n = cur.u64()? as usize;
    let ny = cur.u32()? as usize;
    let nz = cur.u32()? as usize;
    let has_seed = cur.take(1)?[0] == 1;
    let seed = cur.u64()?;
    let name_len = cur.u32()? as usize;
    let name = String::from_utf8(cur.take(name_len)?.to_vec())
        .map_err(|_| DataError::Malformed("name is not UTF-8".into()))?;
    let total = n.checked_mul(k).ok_or_else(|| DataError::Malformed("size overflow".into()))?;
    let mut features = Vec::with_capacity(total);
    for _ in 0..total {
        features.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
    }
    let mut labels = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for col in &mut labels {
        for _ in 0..n {
            col.push(cur.u32()? as usize);
        }
    }
    let [y, z] = labels;
    Ok(DualTaskDataset::new(name, k, features, y, z, ny, nz)?.with_seed(has_seed.then_some(seed)))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| DataError::Malformed("truncated snapshot".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_dual_task, PlantedStructure};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn csv_and_snapshot_round_trip(seed in any::<u64>(), n in 2usize..40, k in 1usize..9) {
            let s = PlantedStructure::new(vec![0], vec![k - 1], 0.3);
            let ds = gen_synthetic_dual_task(n, k, 2, 3, &s, seed).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let snap = dir.path().join("d.bin");
            write_snapshot(&ds, &snap).unwrap();
            prop_assert_eq!(read_snapshot(&snap).unwrap(), ds.clone());
            let csvp = dir.path().join("d.csv");
            write_csv(&ds, &csvp).unwrap();
            let back = read_csv(&csvp, Some((3, 2))).unwrap();
            prop_assert_eq!(back.features(), ds.features());
            prop_assert_eq!(back.labels(Task::Identity), ds.labels(Task::Identity));
        }
    }

    #[test]
    fn csv_header_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "a,b,y,z\n0.1,0.2,0,1\n").unwrap();
        assert!(read_csv(&p, None).is_err());
    }

    #[test]
    fn truncated_snapshot_is_rejected() {
        let s = PlantedStructure::new(vec![0], vec![1], 0.0);
        let ds = gen_synthetic_dual_task(5, 2, 2, 2, &s, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        write_snapshot(&ds, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_snapshot(&p).is_err());
    }
}
