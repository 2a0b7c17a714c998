use kae_core::dataset::Split;
use kae_core::numcore::Tensor;
use kae_core::report::{padded_range, Panel, Svg};
use kae_core::training::LossReport;

const RED: &str = "#d62728";
const BLUE: &str = "#1f4e9c";

/// Exact and predicted solution side by side, initial state in red and final state in blue.
pub fn rollout_svg(x: &[f64], reference: &Tensor, pred: &Tensor, t_end: f64, family: &str) -> String {
    let last = reference.rows() - 1;
    let yr = padded_range(
        [reference.row(0), reference.row(last), pred.row(0), pred.row(last)].into_iter().flatten().copied(),
    );
    let xr = (x[0], x[x.len() - 1]);
    let mut svg = Svg::new(900.0, 400.0);
    svg.text(450.0, 22.0, &format!("{family} initial condition"), 14.0, "middle", "black");
    for (i, (title, m)) in [("Exact solution", reference), ("Network prediction", pred)].into_iter().enumerate() {
        let p = Panel::new(80.0 + 440.0 * i as f64, 60.0, 360.0, 260.0, xr, yr);
        p.series(&mut svg, x, m.row(0), RED, 1.8, false);
        p.series(&mut svg, x, m.row(last), BLUE, 1.8, false);
        p.frame(&mut svg, title, "x", (i == 0).then_some("u"));
        p.legend(&mut svg, &[("t = 0", RED), (&format!("t = {t_end}"), BLUE)]);
    }
    svg.finish()
}

/// Median inference time (left axis) and loss (right axis) against head count.
pub fn bench_svg(rows: &[(usize, f64, f64)], loss_label: &str) -> String {
    let lx: Vec<f64> = rows.iter().map(|r| (r.0 as f64).log2()).collect();
    let ms: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let loss: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let lo = lx.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = lx.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let xr = (lo - 0.5, hi + 0.5);
    let (x0, y0, w, h) = (90.0, 50.0, 480.0, 300.0);
    let left = Panel::new(x0, y0, w, h, xr, padded_range(ms.iter().copied()));
    let right = Panel::new(x0, y0, w, h, xr, padded_range(loss.iter().copied()));

    let mut svg = Svg::new(680.0, 430.0);
    svg.rect(x0, y0, w, h, "none", "black");
    for (&v, r) in lx.iter().zip(rows) {
        let px = left.px(v);
        svg.line(px, y0 + h, px, y0 + h + 4.0, "black", 1.0);
        svg.text(px, y0 + h + 16.0, &r.0.to_string(), 10.0, "middle", "black");
    }
    left.yticks(&mut svg, x0, -1.0, BLUE);
    right.yticks(&mut svg, x0 + w, 1.0, RED);
    left.series(&mut svg, &lx, &ms, BLUE, 2.0, false);
    left.markers(&mut svg, &lx, &ms, BLUE, 3.5);
    right.series(&mut svg, &lx, &loss, RED, 2.0, true);
    right.markers(&mut svg, &lx, &loss, RED, 3.5);
    svg.text(x0 + w / 2.0, y0 - 14.0, "Inference time and loss against attention heads", 13.0, "middle", "black");
    svg.text(x0 + w / 2.0, y0 + h + 36.0, "number of heads", 12.0, "middle", "black");
    svg.vtext(x0 - 56.0, y0 + h / 2.0, "median batch time (ms)", 12.0, BLUE);
    svg.vtext(x0 + w + 62.0, y0 + h / 2.0, "total loss", 12.0, RED);
    svg.text(x0, y0 + h + 62.0, loss_label, 11.0, "start", "#555555");
    svg.finish()
}

fn totals(history: &[LossReport], split: Split) -> (Vec<f64>, Vec<f64>) {
    history.iter().filter(|r| r.split == split).map(|r| (r.epoch as f64, r.total)).unzip()
}

/// Semilog train (solid) and validation (dashed) totals with an inset of the last 100 epochs.
pub fn compare_svg(title: &str, curves: &[(&str, &str, &[LossReport])]) -> String {
    let all: Vec<&LossReport> = curves.iter().flat_map(|c| c.2.iter()).collect();
    let emax = all.iter().map(|r| r.epoch).max().unwrap_or(1).max(1) as f64;
    let pos = all.iter().map(|r| r.total).filter(|v| *v > 0.0 && v.is_finite());
    let lo = pos.clone().fold(f64::INFINITY, f64::min);
    let hi = pos.fold(0.0, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (1e-3, 1.0) };

    let mut svg = Svg::new(780.0, 500.0);
    let main = Panel::semilog(90.0, 50.0, 620.0, 370.0, (1.0, emax.max(2.0)), lo, hi);
    for (_, color, h) in curves {
        for (split, dashed) in [(Split::Train, false), (Split::Val, true)] {
            let (x, y) = totals(h, split);
            main.series(&mut svg, &x, &y, color, 1.6, dashed);
        }
    }
    main.frame(&mut svg, title, "epoch", Some("total loss"));
    for (i, (label, color, _)) in curves.iter().enumerate() {
        for (j, (kind, dashed)) in [("train", false), ("validation", true)].into_iter().enumerate() {
            let y = main.y + main.h - 40.0 + 15.0 * j as f64 - 32.0 * i as f64;
            let x = main.x + 12.0;
            svg.polyline(&[(x, y - 4.0), (x + 22.0, y - 4.0)], color, 2.0, dashed);
            svg.text(x + 28.0, y, &format!("{label} {kind}"), 11.0, "start", "black");
        }
    }

    let start = (emax - 99.0).max(1.0);
    let tail: Vec<f64> = all.iter().filter(|r| r.epoch as f64 >= start).map(|r| r.total).collect();
    let (ix, iy, iw, ih) = (main.x + main.w * 0.48, main.y + 24.0, main.w * 0.48, main.h * 0.4);
    svg.rect(ix - 50.0, iy - 20.0, iw + 58.0, ih + 46.0, "white", "none");
    let inset = Panel::new(ix, iy, iw, ih, (start, emax.max(start + 1.0)), padded_range(tail));
    for (_, color, h) in curves {
        for (split, dashed) in [(Split::Train, false), (Split::Val, true)] {
            let (x, y) = totals(h, split);
            let (x, y): (Vec<f64>, Vec<f64>) = x.into_iter().zip(y).filter(|(e, _)| *e >= start).unzip();
            inset.series(&mut svg, &x, &y, color, 1.4, dashed);
        }
    }
    inset.frame(&mut svg, "last 100 epochs", "", None);
    svg.finish()
}
