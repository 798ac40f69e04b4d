use std::fmt::Write as _;

use lanekit::anchor::YSampling;
use lanekit::lane::LaneRecord;
use lanekit::synth::{read_manifest, read_scene};
use serde_json::{json, Value};

use crate::args::PlotArgs;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::util::{echo_config, read_predictions, require, write_atomic};

pub struct PlotOpts {
    pub scenes: Vec<String>,
    pub max: usize,
}

pub fn apply(args: &PlotArgs, cfg: &mut RunConfig) -> PlotOpts {
    if args.data.is_some() {
        cfg.paths.data = args.data.clone();
    }
    if args.pred.is_some() {
        cfg.paths.predictions = args.pred.clone();
    }
    if args.out.out.is_some() {
        cfg.paths.out = args.out.out.clone();
    }
    PlotOpts { scenes: args.scenes.clone(), max: args.max }
}

const W: f64 = 320.0;
const H: f64 = 480.0;
const PAD: f64 = 30.0;

/// Panel mapping data ranges onto a pixel box.
struct Panel {
    x0: f64,
    xr: (f64, f64),
    yr: (f64, f64),
    w: f64,
    h: f64,
}

impl Panel {
    fn map(&self, a: f64, b: f64) -> (f64, f64) {
        let u = self.x0 + PAD + (a - self.xr.0) / (self.xr.1 - self.xr.0) * (self.w - 2.0 * PAD);
        let v = H - PAD - (b - self.yr.0) / (self.yr.1 - self.yr.0) * (self.h - 2.0 * PAD);
        (u, v)
    }

    fn frame(&self, svg: &mut String, title: &str, xl: &str, yl: &str) {
        let (l, t) = (self.x0 + PAD, PAD);
        let _ = writeln!(
            svg,
            r##"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
            self.w - 2.0 * PAD,
            self.h - 2.0 * PAD
        );
        let _ = writeln!(svg, r#"<text x="{l}" y="{}" font-size="12">{title}</text>"#, t - 8.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="10">{xl} [{:.0}, {:.0}]</text>"#, l, H - 8.0, self.xr.0, self.xr.1);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="10">{yl} [{:.1}, {:.1}]</text>"#, self.x0 + self.w - PAD - 70.0, H - 8.0, self.yr.0, self.yr.1);
    }

    fn polyline(&self, svg: &mut String, pts: &[(f64, f64)], color: &str, dashed: bool) {
        if pts.len() < 2 {
            return;
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|&(a, b)| {
                let (u, v) = self.map(a, b);
                format!("{u:.1},{v:.1}")
            })
            .collect();
        let dash = if dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#, coords.join(" "));
    }
}

fn visible(r: &LaneRecord) -> impl Iterator<Item = &[f64; 4]> {
    r.points.iter().filter(|p| p[3] >= 0.5)
}

/// Top view (x against y) and side view (y against z); ground truth solid, predictions dashed.
pub fn render_svg(name: &str, gt: &[LaneRecord], pred: &[LaneRecord]) -> String {
    let all = || gt.iter().chain(pred).flat_map(visible);
    let ext = |f: fn(&[f64; 4]) -> f64, lo: f64, hi: f64| all().map(f).fold((lo, hi), |(a, b), v| (a.min(v), b.max(v)));
    let (y0, y1) = ext(|p| p[1], f64::INFINITY, f64::NEG_INFINITY);
    let (y0, y1) = if y0 < y1 { (y0, y1) } else { (0.0, 100.0) };
    let (x0, x1) = ext(|p| p[0], -8.0, 8.0);
    let (z0, z1) = ext(|p| p[2], -1.0, 1.0);
    let top = Panel { x0: 0.0, xr: (x0 - 1.0, x1 + 1.0), yr: (y0, y1), w: W, h: H };
    let side = Panel { x0: W, xr: (y0, y1), yr: (z0 - 0.5, z1 + 0.5), w: W, h: H };
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{H}" font-family="sans-serif">"#, 2.0 * W);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    top.frame(&mut svg, &format!("{name}: top view"), "x", "y");
    side.frame(&mut svg, "side view", "y", "z");
    for (recs, color, dashed) in [(gt, "#1a7f37", false), (pred, "#cf222e", true)] {
        for r in recs {
            let tp: Vec<_> = visible(r).map(|p| (p[0], p[1])).collect();
            let sp: Vec<_> = visible(r).map(|p| (p[1], p[2])).collect();
            top.polyline(&mut svg, &tp, color, dashed);
            side.polyline(&mut svg, &sp, color, dashed);
        }
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn run(cfg: &RunConfig, opts: &PlotOpts) -> Result<Value, CliError> {
    let data = require(cfg.paths.data.clone(), "dataset directory (--data)")?;
    let out = require(cfg.paths.out.clone(), "output directory (--out)")?;
    let manifest = read_manifest(&data)?;
    let ys = YSampling::new(manifest.y_samples.clone()).map_err(CliError::data)?;
    let preds = match &cfg.paths.predictions {
        Some(p) => Some(read_predictions(p)?),
        None => None,
    };
    let names: Vec<String> = if !opts.scenes.is_empty() {
        opts.scenes.clone()
    } else if let Some((set, _)) = &preds {
        set.scenes.iter().take(opts.max).cloned().collect()
    } else {
        manifest.scenes.iter().filter(|e| e.split.is_some()).take(opts.max).map(|e| e.name.clone()).collect()
    };
    let mut written = Vec::new();
    for name in &names {
        if !manifest.scenes.iter().any(|e| &e.name == name) {
            return Err(CliError::Config(format!("scene {name} is not in the dataset")));
        }
        let gt: Vec<LaneRecord> = read_scene(&data.join(name), &ys)?.gt.iter().map(|l| LaneRecord::from_lane(l, &ys)).collect();
        let pred = preds
            .as_ref()
            .and_then(|(set, lanes)| set.scenes.iter().position(|s| s == name).map(|i| lanes[i].clone()))
            .unwrap_or_default();
        let file = out.join(format!("{name}.svg"));
        write_atomic(&file, render_svg(name, &gt, &pred).as_bytes())?;
        written.push(file);
    }
    echo_config(&out, cfg)?;
    Ok(json!({ "command": "plot", "out": out, "files": written }))
}
