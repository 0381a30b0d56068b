//! CSV token tables and 8-bit PGM heat images.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::truth::CameraTruth;
use crate::decoder::DecoderTrace;
use crate::error::{ensure, Error, Result};
use crate::numeric::DenseMatrix;
use crate::sampling::QualityMaps;

/// Binary PGM (P5) bytes with each value mapped to `round(255 · v / max)`.
/// An all-nonpositive image maps to zeros. Returns the bytes and `max`.
pub fn encode_pgm(width: usize, height: usize, values: &[f64]) -> Result<(Vec<u8>, f64)> {
    ensure!(
        values.len() == width * height,
        "{} values for a {width}x{height} image",
        values.len()
    );
    ensure!(width > 0 && height > 0, "image must not be empty");
    let max = values.iter().copied().fold(0.0, f64::max);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if max > 0.0 {
            (255.0 * v.max(0.0) / max).round() as u8
        } else {
            0
        }
    }));
    Ok((out, max))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.pgm` plus a `<stem>.txt` sidecar describing the scaling.
pub fn write_pgm(dir: &Path, stem: &str, width: usize, height: usize, values: &[f64], what: &str) -> Result<PathBuf> {
    let (bytes, max) = encode_pgm(width, height, values)?;
    let pgm = dir.join(format!("{stem}.pgm"));
    write_file(&pgm, &bytes)?;
    let note = format!(
        "{what}\nsize: {width}x{height}\nscaling: max-normalized, pixel = round(255 * value / max), negatives clipped to 0\nmax: {max}\n"
    );
    write_file(&dir.join(format!("{stem}.txt")), note.as_bytes())?;
    Ok(pgm)
}

/// One row per token: `camera,row,col,Q,C,P,sampled,H,y`.
pub fn write_token_table<W: Write>(truth: &[CameraTruth], maps: &QualityMaps, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["camera", "row", "col", "Q", "C", "P", "sampled", "H", "y"])?;
    let mut i = 0;
    for t in truth {
        let tt = &t.targets;
        for tok in 0..tt.len() {
            w.write_record(&[
                t.camera.to_string(),
                (tok / tt.width).to_string(),
                (tok % tt.width).to_string(),
                maps.quality[i].to_string(),
                maps.centerness[i].to_string(),
                maps.priority[i].to_string(),
                u8::from(maps.sampled[i]).to_string(),
                tt.heatmap[tok].to_string(),
                tt.iou[tok].to_string(),
            ])?;
            i += 1;
        }
    }
    w.flush().map_err(|e| Error::io("<token table>", e))?;
    Ok(())
}

/// One row per token with every target:
/// `camera,row,col,class,owner,l,t,r,b,H,du,dv,y` (empty cells for absent values).
pub fn write_target_table<W: Write>(truth: &[CameraTruth], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["camera", "row", "col", "class", "owner", "l", "t", "r", "b", "H", "du", "dv", "y"])?;
    let opt = |x: Option<usize>| x.map_or(String::new(), |v| v.to_string());
    for ct in truth {
        let t = &ct.targets;
        for tok in 0..t.len() {
            let (du, dv) = t.offset[tok].map_or((String::new(), String::new()), |[a, b]| (a.to_string(), b.to_string()));
            let mut rec = vec![
                ct.camera.to_string(),
                (tok / t.width).to_string(),
                (tok % t.width).to_string(),
                opt(t.class[tok]),
                opt(t.owner[tok]),
            ];
            rec.extend(t.ltrb[tok].iter().map(|x| x.to_string()));
            rec.extend([t.heatmap[tok].to_string(), du, dv, t.iou[tok].to_string()]);
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<target table>", e))?;
    Ok(())
}

/// Per camera: Q, C, P, H and the sampled mask as PGMs, plus `tokens.csv`.
pub fn dump_maps(dir: &Path, truth: &[CameraTruth], maps: &QualityMaps) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let csv_path = dir.join("tokens.csv");
    let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_token_table(truth, maps, file)?;
    written.push(csv_path);
    let mut offset = 0;
    for t in truth {
        let tt = &t.targets;
        let n = tt.len();
        let range = offset..offset + n;
        let sampled: Vec<f64> = maps.sampled[range.clone()].iter().map(|&s| f64::from(u8::from(s))).collect();
        let layers: [(&str, &[f64], &str); 5] = [
            ("Q", &maps.quality[range.clone()], "quality score Q"),
            ("C", &maps.centerness[range.clone()], "centerness score C"),
            ("P", &maps.priority[range.clone()], "sampling priority P"),
            ("H", &tt.heatmap, "center heatmap target H"),
            ("sampled", &sampled, "sampled-token mask"),
        ];
        for (name, values, what) in layers {
            let stem = format!("cam{}_{name}", t.camera);
            written.push(write_pgm(dir, &stem, tt.width, tt.height, values, what)?);
        }
        offset += n;
    }
    Ok(written)
}

fn write_matrix_csv(path: &Path, m: &DenseMatrix) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["query".to_string()];
    header.extend((0..m.cols()).map(|j| format!("t{j}")));
    w.write_record(&header)?;
    for (r, row) in m.row_iter().enumerate() {
        let mut rec = vec![r.to_string()];
        rec.extend(row.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// `attn_layer{l}.pgm`, `.txt` and `.csv` for every layer; rows are
/// queries, columns sampled tokens.
pub fn dump_attention(dir: &Path, trace: &DecoderTrace) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (l, a) in trace.attention.iter().enumerate() {
        let stem = format!("attn_layer{l}");
        let what = format!("cross-attention weights, layer {l} (rows: queries, columns: sampled tokens)");
        written.push(write_pgm(dir, &stem, a.cols(), a.rows(), a.data(), &what)?);
        let csv_path = dir.join(format!("{stem}.csv"));
        write_matrix_csv(&csv_path, a)?;
        written.push(csv_path);
    }
    Ok(written)
}
