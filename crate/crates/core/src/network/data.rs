//! Digit samples: IDX files and per-sample intensity CSVs.

use std::path::Path;

use super::NetworkError;

/// One labelled sample with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub label: usize,
    pub values: Vec<f64>,
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, NetworkError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| NetworkError::Data("truncated IDX header".into()))
}

fn read(path: &Path) -> Result<Vec<u8>, NetworkError> {
    std::fs::read(path).map_err(|e| NetworkError::Io(format!("{}: {e}", path.display())))
}

/// Parses an unsigned-byte image file; returns `(rows, cols, images)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<u8>>), NetworkError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES {
        return Err(NetworkError::Data(format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() < n * size {
        return Err(NetworkError::Data(format!("expected {n} images of {size} bytes, file too short")));
    }
    Ok((rows, cols, body.chunks(size).take(n).map(<[u8]>::to_vec).collect()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, NetworkError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS {
        return Err(NetworkError::Data(format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(NetworkError::Data(format!("expected {n} labels, file too short")));
    }
    Ok(body[..n].to_vec())
}

/// 2×2 average pooling followed by a symmetric zero pad (or centre crop) to
/// `side × side`. Output intensities are scaled to `[0, 1]`.
pub fn preprocess(pixels: &[u8], rows: usize, cols: usize, side: usize) -> Vec<f64> {
    let (pr, pc) = (rows / 2, cols / 2);
    let mut pooled = vec![0.0; pr * pc];
    for r in 0..pr {
        for c in 0..pc {
            let sum: u32 = [(0, 0), (0, 1), (1, 0), (1, 1)]
                .iter()
                .map(|(dr, dc)| pixels[(2 * r + dr) * cols + 2 * c + dc] as u32)
                .sum();
            pooled[r * pc + c] = sum as f64 / (4.0 * 255.0);
        }
    }
    let mut out = vec![0.0; side * side];
    let off_r = side as isize - pr as isize;
    let off_c = side as isize - pc as isize;
    for r in 0..side as isize {
        for c in 0..side as isize {
            let (sr, sc) = (r - off_r / 2, c - off_c / 2);
            if sr >= 0 && sc >= 0 && (sr as usize) < pr && (sc as usize) < pc {
                out[(r as usize) * side + c as usize] = pooled[sr as usize * pc + sc as usize];
            }
        }
    }
    out
}

/// Loads an IDX image/label pair, keeps the labels in `keep` and
/// preprocesses every image to `side × side`.
pub fn load_idx(images: &Path, labels: &Path, keep: &[usize], side: usize) -> Result<Vec<Sample>, NetworkError> {
    let (rows, cols, imgs) = parse_idx_images(&read(images)?)?;
    let labs = parse_idx_labels(&read(labels)?)?;
    if imgs.len() != labs.len() {
        return Err(NetworkError::Data(format!("{} images but {} labels", imgs.len(), labs.len())));
    }
    Ok(imgs
        .iter()
        .zip(labs)
        .filter(|(_, l)| keep.contains(&(*l as usize)))
        .map(|(img, l)| Sample { label: l as usize, values: preprocess(img, rows, cols, side) })
        .collect())
}

/// Loads every `*.csv` in `dir` (sorted by file name). The label is the file
/// name prefix before the first `_`; the body holds comma- or
/// newline-separated intensities in `[0, 1]`.
pub fn load_csv_dir(dir: &Path) -> Result<Vec<Sample>, NetworkError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| NetworkError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let label =
            stem.split('_').next().and_then(|s| s.parse().ok()).ok_or_else(|| {
                NetworkError::Data(format!("{}: file name must start with '<label>_'", path.display()))
            })?;
        let text = std::fs::read_to_string(&path).map_err(|e| NetworkError::Io(format!("{}: {e}", path.display())))?;
        let values = text
            .split([',', '\n', '\r'])
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| (0.0..=1.0).contains(v))
                    .ok_or_else(|| NetworkError::Data(format!("{}: bad intensity '{s}'", path.display())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(Sample { label, values });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, body: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IDX_IMAGES, n, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(body);
        v
    }

    #[test]
    fn parses_idx() {
        let bytes = idx_images(2, 2, 2, &[0, 1, 2, 3, 4, 5, 6, 7]);
        let (r, c, imgs) = parse_idx_images(&bytes).unwrap();
        assert_eq!((r, c), (2, 2));
        assert_eq!(imgs[1], vec![4, 5, 6, 7]);
        assert!(parse_idx_images(&bytes[..20]).is_err());
        let mut labels = IDX_LABELS.to_be_bytes().to_vec();
        labels.extend_from_slice(&2u32.to_be_bytes());
        labels.extend_from_slice(&[1, 0]);
        assert_eq!(parse_idx_labels(&labels).unwrap(), vec![1, 0]);
        assert!(parse_idx_labels(&bytes).is_err());
    }

    #[test]
    fn pool_and_pad() {
        let mut img = vec![0u8; 28 * 28];
        img[0] = 255;
        img[1] = 255;
        img[28] = 255;
        img[29] = 255;
        let out = preprocess(&img, 28, 28, 16);
        assert_eq!(out.len(), 256);
        // pooled (0,0) lands at (1,1) after a one-pixel border
        assert_eq!(out[16 + 1], 1.0);
        assert_eq!(out.iter().filter(|&&v| v > 0.0).count(), 1);
    }

    #[test]
    fn csv_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("1_a.csv"), "0.5,1\n0\n").unwrap();
        std::fs::write(dir.path().join("0_b.csv"), "0,0,0.25").unwrap();
        let s = load_csv_dir(dir.path()).unwrap();
        assert_eq!(s[0], Sample { label: 0, values: vec![0.0, 0.0, 0.25] });
        assert_eq!(s[1].label, 1);
        std::fs::write(dir.path().join("x_c.csv"), "0").unwrap();
        assert!(load_csv_dir(dir.path()).is_err());
    }
}
