//! Raster outputs: equirectangular panoramas and class-statistics charts.

use std::f64::consts::PI;

use image::{Rgb, RgbImage};
use shellseg::stats::ClassStats;
use shellseg::synth::default_palette;
use shellseg::{PointCloud, IGNORE_LABEL};

use crate::config::LabelColoring;
use crate::CliError;

pub const EMPTY: Rgb<u8> = Rgb([255, 255, 0]);
const IGNORED: Rgb<u8> = Rgb([128, 128, 128]);

/// Pixel hit by a direction from the origin. Azimuth `[-π, π)` runs left to
/// right; elevation `π/2` is the top row.
pub fn project(p: &[f64; 3], width: u32, height: u32) -> Option<(u32, u32)> {
    let r = shellseg::cloud::norm(p);
    if r == 0.0 {
        return None;
    }
    let azimuth = p[1].atan2(p[0]);
    let elevation = (p[2] / r).clamp(-1.0, 1.0).asin();
    let x = ((azimuth + PI) / (2.0 * PI) * width as f64).floor() as i64;
    let y = ((PI / 2.0 - elevation) / PI * height as f64).floor() as i64;
    Some((
        x.rem_euclid(width as i64) as u32,
        y.clamp(0, height as i64 - 1) as u32,
    ))
}

/// Nearest point per pixel wins; pixels without points stay yellow.
pub fn panorama(
    pc: &PointCloud,
    width: u32,
    height: u32,
    coloring: LabelColoring,
) -> Result<RgbImage, CliError> {
    if width == 0 || height == 0 {
        return Err(CliError::Config(
            "render canvas must be at least 1x1".into(),
        ));
    }
    let palette = default_palette();
    let color_of: Box<dyn Fn(usize) -> Rgb<u8>> = match coloring {
        LabelColoring::Rgb => {
            let colors = match &pc.colors {
                Some(c) => c,
                None if pc.is_empty() => return Ok(RgbImage::from_pixel(width, height, EMPTY)),
                None => return Err(shellseg::Error::MissingColors(pc.scene_id.clone()).into()),
            };
            Box::new(move |i| Rgb(colors[i]))
        }
        LabelColoring::Class => {
            let labels = match &pc.labels {
                Some(l) => l,
                None if pc.is_empty() => return Ok(RgbImage::from_pixel(width, height, EMPTY)),
                None => return Err(shellseg::Error::MissingLabels(pc.scene_id.clone()).into()),
            };
            Box::new(move |i| match labels[i] {
                IGNORE_LABEL => IGNORED,
                l => Rgb(palette[l as usize % palette.len()]),
            })
        }
    };
    let mut img = RgbImage::from_pixel(width, height, EMPTY);
    let mut depth = vec![f64::INFINITY; width as usize * height as usize];
    for (i, p) in pc.positions.iter().enumerate() {
        let Some((x, y)) = project(p, width, height) else {
            continue;
        };
        let slot = &mut depth[y as usize * width as usize + x as usize];
        let d = shellseg::cloud::norm(p);
        if d < *slot {
            *slot = d;
            img.put_pixel(x, y, color_of(i));
        }
    }
    Ok(img)
}

/// Classes with at least one point on average.
pub fn present_classes(stats: &ClassStats) -> Vec<usize> {
    (0..stats.points_mean.len())
        .filter(|&c| stats.points_mean[c] > 0.0)
        .collect()
}

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const GRID: Rgb<u8> = Rgb([200, 200, 200]);
const INK: Rgb<u8> = Rgb([0, 0, 0]);
const MARGIN: u32 = 20;

struct Panel {
    x0: u32,
    x1: u32,
    y0: u32,
    y1: u32,
}

/// Log-scale bar chart of per-class point counts, and instance counts when
/// known, side by side. Bars show the mean with a ±std whisker.
pub fn class_chart(stats: &ClassStats, width: u32, height: u32) -> Result<RgbImage, CliError> {
    if width < 8 * MARGIN || height < 4 * MARGIN {
        return Err(CliError::Config(format!(
            "chart must be at least {}x{}",
            8 * MARGIN,
            4 * MARGIN
        )));
    }
    let mut img = RgbImage::from_pixel(width, height, BACKGROUND);
    let classes = present_classes(stats);
    let mut series = vec![(&stats.points_mean, &stats.points_std)];
    if let (Some(m), Some(s)) = (&stats.instances_mean, &stats.instances_std) {
        series.push((m, s));
    }
    let panel_w = (width - MARGIN) / series.len() as u32;
    for (k, (mean, std)) in series.into_iter().enumerate() {
        let panel = Panel {
            x0: MARGIN + k as u32 * panel_w,
            x1: MARGIN + (k as u32 + 1) * panel_w - MARGIN,
            y0: MARGIN,
            y1: height - MARGIN,
        };
        draw_panel(&mut img, &panel, &classes, mean, std);
    }
    Ok(img)
}

fn draw_panel(img: &mut RgbImage, panel: &Panel, classes: &[usize], mean: &[f64], std: &[f64]) {
    let positive = |v: f64| (v > 0.0).then_some(v);
    let lows = classes
        .iter()
        .filter_map(|&c| positive(mean[c] - std[c]).or(positive(mean[c])));
    let lo = lows.fold(f64::INFINITY, f64::min);
    let hi = classes
        .iter()
        .map(|&c| mean[c] + std[c])
        .fold(0.0, f64::max);
    let (lo_dec, hi_dec) = if lo.is_finite() && hi > 0.0 {
        (
            lo.log10().floor(),
            hi.log10().ceil().max(lo.log10().floor() + 1.0),
        )
    } else {
        (0.0, 1.0)
    };
    let span = (panel.y1 - panel.y0) as f64;
    let to_y = |v: f64| -> u32 {
        if v <= 0.0 {
            return panel.y1;
        }
        let t = ((v.log10() - lo_dec) / (hi_dec - lo_dec)).clamp(0.0, 1.0);
        panel.y1 - (t * span).round() as u32
    };
    for dec in lo_dec as i32..=hi_dec as i32 {
        let y = to_y(10f64.powi(dec));
        for x in panel.x0..=panel.x1 {
            img.put_pixel(x, y, GRID);
        }
    }
    let palette = default_palette();
    let slot = (panel.x1 - panel.x0) as f64 / classes.len().max(1) as f64;
    for (j, &c) in classes.iter().enumerate() {
        let left = panel.x0 + (j as f64 * slot + slot * 0.2).round() as u32 + 1;
        let right = panel.x0 + ((j + 1) as f64 * slot - slot * 0.2).round() as u32;
        let top = to_y(mean[c]);
        let color = Rgb(palette[c % palette.len()]);
        for x in left..right.max(left + 1) {
            for y in top..panel.y1 {
                img.put_pixel(x, y, color);
            }
        }
        let mid = (left + right) / 2;
        let (w_top, w_bottom) = (
            to_y(mean[c] + std[c]),
            to_y(mean[c] - std[c]).min(panel.y1 - 1),
        );
        for y in w_top..=w_bottom {
            img.put_pixel(mid, y, INK);
        }
        for x in mid.saturating_sub(2)..=mid + 2 {
            img.put_pixel(x, w_top, INK);
            img.put_pixel(x, w_bottom, INK);
        }
    }
    for y in panel.y0..=panel.y1 {
        img.put_pixel(panel.x0, y, INK);
    }
    for x in panel.x0..=panel.x1 {
        img.put_pixel(x, panel.y1, INK);
    }
}

/// Bars crossing the row just above the first panel's x axis.
#[cfg(test)]
fn count_bars(img: &RgbImage, panel_right: u32) -> usize {
    let y = img.height() - MARGIN - 1;
    let mut runs = 0;
    let mut inside = false;
    for x in MARGIN + 1..panel_right {
        let p = *img.get_pixel(x, y);
        let bar = p != BACKGROUND && p != GRID;
        if bar && !inside {
            runs += 1;
        }
        inside = bar;
    }
    runs
}
