//! Training-curve plots (one PNG per metric family, train vs. validation).
//!
//! Axis text needs a TrueType font, which is looked up at runtime
//! (`OCTSEG_FONT`, then common system locations). Without one the curves
//! are still drawn, just unlabeled.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use plotters::prelude::*;
use plotters::style::FontStyle;

use crate::error::{Error, Result};
use crate::trainer::EpochLog;

const FONT_CANDIDATES: &[&str] = &[
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/truetype/liberation/LiberationSans-Regular.ttf",
    "/usr/share/fonts/liberation-sans/LiberationSans-Regular.ttf",
    "/Library/Fonts/Arial.ttf",
    "/System/Library/Fonts/Supplemental/Arial.ttf",
    "C:\\Windows\\Fonts\\arial.ttf",
];

fn font_available() -> bool {
    static FONT: OnceLock<bool> = OnceLock::new();
    *FONT.get_or_init(|| {
        let from_env = std::env::var_os("OCTSEG_FONT").map(PathBuf::from);
        let candidates = from_env.into_iter().chain(FONT_CANDIDATES.iter().map(PathBuf::from));
        for path in candidates {
            if let Ok(bytes) = std::fs::read(&path) {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if plotters::style::register_font("sans-serif", FontStyle::Normal, bytes).is_ok() {
                    return true;
                }
            }
        }
        ::log::warn!("no TrueType font found (set OCTSEG_FONT); plots will have no text");
        false
    })
}

/// One plotted metric with its training and validation series.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveFamily {
    /// File stem.
    pub key: &'static str,
    pub title: &'static str,
    pub train: Vec<(usize, f64)>,
    pub validation: Vec<(usize, f64)>,
}

/// The four plotted series families; NaN entries are dropped.
pub fn curve_families(history: &[EpochLog]) -> Vec<CurveFamily> {
    type Get = fn(&EpochLog) -> f64;
    let specs: [(&str, &str, Get, Get); 4] = [
        ("loss", "Loss", |e| e.loss, |e| e.val_loss),
        ("accuracy", "Accuracy", |e| e.accuracy, |e| e.val_accuracy),
        ("dice_coefficient", "Dice Coefficient", |e| e.dice, |e| e.val_dice),
        ("iou", "Jaccard Index (IoU)", |e| e.iou, |e| e.val_iou),
    ];
    let series = |get: Get| -> Vec<(usize, f64)> {
        history
            .iter()
            .map(|e| (e.epoch, get(e)))
            .filter(|(_, v)| v.is_finite())
            .collect()
    };
    specs
        .into_iter()
        .map(|(key, title, train, val)| CurveFamily {
            key,
            title,
            train: series(train),
            validation: series(val),
        })
        .collect()
}

fn render_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Render(e.to_string())
}

fn value_range(family: &CurveFamily) -> (f64, f64) {
    let values = family.train.iter().chain(&family.validation).map(|&(_, v)| v);
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5f64.max(lo.abs() * 0.1) };
    (lo - pad, hi + pad)
}

fn plot_family(family: &CurveFamily, path: &Path, epochs: (usize, usize), with_text: bool) -> Result<()> {
    let root = BitMapBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(render_err)?;
    let x_range = (epochs.0 as f64 - 0.5)..(epochs.1 as f64 + 0.5);
    let (lo, hi) = value_range(family);
    let mut builder = ChartBuilder::on(&root);
    builder.margin(20);
    if with_text {
        builder
            .caption(family.title, ("sans-serif", 24))
            .x_label_area_size(45)
            .y_label_area_size(70);
    }
    let mut chart = builder.build_cartesian_2d(x_range, lo..hi).map_err(render_err)?;
    if with_text {
        chart
            .configure_mesh()
            .x_desc("Epoch")
            .y_desc(family.title)
            .draw()
            .map_err(render_err)?;
    }

    let series = [(&family.train, BLUE, "Training"), (&family.validation, RED, "Validation")];
    for (points, color, label) in series {
        if points.is_empty() {
            continue;
        }
        let xy: Vec<(f64, f64)> = points.iter().map(|&(e, v)| (e as f64, v)).collect();
        let drawn = chart
            .draw_series(LineSeries::new(xy.clone(), color.stroke_width(2)))
            .map_err(render_err)?;
        if with_text {
            drawn
                .label(label)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
        chart
            .draw_series(xy.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(render_err)?;
    }
    if with_text {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(render_err)?;
    }
    root.present().map_err(render_err)
}

/// Write `loss.png`, `accuracy.png`, `dice_coefficient.png` and `iou.png`
/// under `dir`.
pub fn plot_training_curves(history: &[EpochLog], dir: &Path) -> Result<Vec<PathBuf>> {
    let (first, last) = match (history.first(), history.last()) {
        (Some(a), Some(b)) => (a.epoch, b.epoch),
        _ => return Err(Error::InvalidArgument("cannot plot an empty history".into())),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let with_text = font_available();
    curve_families(history)
        .iter()
        .map(|family| {
            let path = dir.join(format!("{}.png", family.key));
            plot_family(family, &path, (first, last), with_text)?;
            Ok(path)
        })
        .collect()
}
