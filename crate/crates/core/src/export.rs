//! Run artifacts: PNG sample grids and CSV loss/metric curves.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::data::denormalize;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::trainer::{EvalRecord, ImageSource, RunLog, StepRecord};

pub const RUNLOG_FILE: &str = "runlog.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EPOCHS_FILE: &str = "epochs.csv";

const RUNLOG_HEADER: &str = "step,epoch,d_loss,g_loss";
const METRICS_HEADER: &str = "epoch,fid,kid,is_mean,is_std,extractor_id,n_eval";
const EPOCHS_HEADER: &str = "epoch,seconds";

/// Tiles `[N, C, H, W]` images in `[-1, 1]` row-major into a grid with
/// `cols` columns and writes a PNG. `C` must be 1 or 3.
pub fn write_image_grid(images: &Tensor, cols: usize, path: &Path) -> Result<()> {
    let s = images.shape();
    if s.len() != 4 || !(s[1] == 1 || s[1] == 3) || s[0] == 0 {
        return Err(Error::shape("image grid", s, &[1, 3, 0, 0]));
    }
    if cols == 0 {
        return Err(Error::Config("image grid needs at least one column".into()));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let cols = cols.min(n);
    let rows = n.div_ceil(cols);
    let bytes = denormalize(&images.data());
    let (gw, gh) = ((cols * w) as u32, (rows * h) as u32);
    let plane = h * w;
    let at = |i: usize, ch: usize, y: usize, x: usize| bytes[i * c * plane + ch * plane + y * w + x];
    if c == 3 {
        let mut img = ImageBuffer::<Rgb<u8>, _>::new(gw, gh);
        for i in 0..n {
            let (oy, ox) = ((i / cols) * h, (i % cols) * w);
            for y in 0..h {
                for x in 0..w {
                    let px = Rgb([at(i, 0, y, x), at(i, 1, y, x), at(i, 2, y, x)]);
                    img.put_pixel((ox + x) as u32, (oy + y) as u32, px);
                }
            }
        }
        img.save_with_format(path, image::ImageFormat::Png)?;
    } else {
        let mut img = ImageBuffer::<Luma<u8>, _>::new(gw, gh);
        for i in 0..n {
            let (oy, ox) = ((i / cols) * h, (i % cols) * w);
            for y in 0..h {
                for x in 0..w {
                    img.put_pixel((ox + x) as u32, (oy + y) as u32, Luma([at(i, 0, y, x)]));
                }
            }
        }
        img.save_with_format(path, image::ImageFormat::Png)?;
    }
    Ok(())
}

/// `count` samples from `source` on a fixed latent stream, written as a grid.
pub fn export_samples(source: &dyn ImageSource, count: usize, cols: usize, seed: u64, path: &Path) -> Result<()> {
    if count == 0 {
        return Err(Error::Config("export_samples needs count >= 1".into()));
    }
    let mut r: Rng = rng::seeded(seed, rng::stream::EVAL_LATENT);
    let images = source.generate(count, &mut r)?;
    write_image_grid(&images, cols, path)
}

/// Reads a grid back into `[rows·cols, C, tile, tile]` values in `[-1, 1]`.
pub fn read_image_grid(path: &Path, tile: usize, count: usize) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    let cols = (img.width() as usize / tile).max(1);
    let mut values = Vec::with_capacity(count * 3 * tile * tile);
    for i in 0..count {
        let (oy, ox) = ((i / cols) * tile, (i % cols) * tile);
        for ch in 0..3 {
            for y in 0..tile {
                for x in 0..tile {
                    let p = img.get_pixel((ox + x) as u32, (oy + y) as u32);
                    values.push(crate::data::normalize_byte(p[ch]));
                }
            }
        }
    }
    Tensor::new(&[count, 3, tile, tile], values)
}

/// Writes the three CSV files of a run log into `dir`.
pub fn export_curves(log: &RunLog, dir: &Path) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(dir.join(RUNLOG_FILE))?);
    writeln!(f, "{RUNLOG_HEADER}")?;
    for s in &log.steps {
        writeln!(f, "{},{},{},{}", s.step, s.epoch, s.d_loss, s.g_loss)?;
    }
    f.flush()?;

    let mut f = BufWriter::new(fs::File::create(dir.join(METRICS_FILE))?);
    writeln!(f, "{METRICS_HEADER}")?;
    for e in &log.evaluations {
        let r = &e.report;
        if r.extractor_id.contains([',', '\n', '"']) {
            return Err(Error::Format {
                what: "metrics CSV".into(),
                detail: format!("extractor id `{}` contains a CSV delimiter", r.extractor_id),
            });
        }
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            e.epoch, r.fid, r.kid, r.is_mean, r.is_std, r.extractor_id, r.n_eval
        )?;
    }
    f.flush()?;

    let mut f = BufWriter::new(fs::File::create(dir.join(EPOCHS_FILE))?);
    writeln!(f, "{EPOCHS_HEADER}")?;
    for (i, s) in log.epoch_seconds.iter().enumerate() {
        writeln!(f, "{},{s}", i + 1)?;
    }
    f.flush()?;
    Ok(())
}

fn rows<'a>(text: &'a str, header: &str, file: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == header => {}
        _ => {
            return Err(Error::Format {
                what: file.into(),
                detail: format!("expected header `{header}`"),
            })
        }
    }
    let width = header.split(',').count();
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let cells: Vec<&str> = l.split(',').collect();
            if cells.len() != width {
                return Err(Error::Format {
                    what: file.into(),
                    detail: format!("line {} has {} fields, expected {width}", i + 1, cells.len()),
                });
            }
            Ok((i + 1, cells))
        })
        .collect()
}

fn field<T: std::str::FromStr>(cell: &str, line: usize, file: &str) -> Result<T> {
    cell.parse().map_err(|_| Error::Format {
        what: file.into(),
        detail: format!("line {line}: cannot parse `{cell}`"),
    })
}

/// Parses the CSV files written by [`export_curves`].
pub fn read_curves(dir: &Path) -> Result<RunLog> {
    let mut log = RunLog::default();
    let text = fs::read_to_string(dir.join(RUNLOG_FILE))?;
    for (line, c) in rows(&text, RUNLOG_HEADER, RUNLOG_FILE)? {
        log.steps.push(StepRecord {
            step: field(c[0], line, RUNLOG_FILE)?,
            epoch: field(c[1], line, RUNLOG_FILE)?,
            d_loss: field(c[2], line, RUNLOG_FILE)?,
            g_loss: field(c[3], line, RUNLOG_FILE)?,
        });
    }
    let text = fs::read_to_string(dir.join(METRICS_FILE))?;
    for (line, c) in rows(&text, METRICS_HEADER, METRICS_FILE)? {
        log.evaluations.push(EvalRecord {
            epoch: field(c[0], line, METRICS_FILE)?,
            report: MetricReport {
                fid: field(c[1], line, METRICS_FILE)?,
                kid: field(c[2], line, METRICS_FILE)?,
                is_mean: field(c[3], line, METRICS_FILE)?,
                is_std: field(c[4], line, METRICS_FILE)?,
                extractor_id: c[5].to_string(),
                n_eval: field(c[6], line, METRICS_FILE)?,
            },
        });
    }
    let text = fs::read_to_string(dir.join(EPOCHS_FILE))?;
    for (line, c) in rows(&text, EPOCHS_HEADER, EPOCHS_FILE)? {
        log.epoch_seconds.push(field(c[1], line, EPOCHS_FILE)?);
    }
    Ok(log)
}
