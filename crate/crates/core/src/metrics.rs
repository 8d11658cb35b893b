//! Displacement (ADE/FDE) and box (ARB/FRB) errors, in pixels.
//!
//! ARB/FRB convert both boxes to corner form, take the RMSE over the four
//! corner coordinates per sample and step, then average over steps and
//! samples (FRB: final step only). All reductions run in sample order.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::representation::BoundingBox;

pub const CSV_HEADER: &str = "dataset,horizon,ade,fde,arb,frb,n_samples";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub ade: f64,
    pub fde: f64,
    pub arb: f64,
    pub frb: f64,
    pub n_samples: usize,
    pub horizon: usize,
}

fn check(pred: &[Vec<BoundingBox>], gt: &[Vec<BoundingBox>]) -> Result<usize> {
    if pred.is_empty() {
        return Err(Error::EmptyDataset("metrics input"));
    }
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            what: "predicted vs ground-truth samples",
            left: pred.len(),
            right: gt.len(),
        });
    }
    let n = pred[0].len();
    if n == 0 {
        return Err(Error::Domain("metrics need a horizon of at least 1".into()));
    }
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != n || g.len() != n {
            return Err(Error::LengthMismatch {
                what: "prediction horizon",
                left: p.len(),
                right: g.len().max(n),
            });
        }
    }
    Ok(n)
}

fn center_dist(p: &BoundingBox, g: &BoundingBox) -> f64 {
    (p.x - g.x).hypot(p.y - g.y)
}

fn corner_rmse(p: &BoundingBox, g: &BoundingBox) -> f64 {
    let (a, b) = (p.to_corners().to_array(), g.to_corners().to_array());
    let ss: f64 = a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum();
    (ss / 4.0).sqrt()
}

fn mean_over(
    pred: &[Vec<BoundingBox>],
    gt: &[Vec<BoundingBox>],
    final_only: bool,
    err: fn(&BoundingBox, &BoundingBox) -> f64,
) -> Result<f64> {
    let n = check(pred, gt)?;
    let steps = if final_only { n - 1..n } else { 0..n };
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        for t in steps.clone() {
            total += err(&p[t], &g[t]);
        }
    }
    Ok(total / (pred.len() * steps.len()) as f64)
}

pub fn ade(pred: &[Vec<BoundingBox>], gt: &[Vec<BoundingBox>]) -> Result<f64> {
    mean_over(pred, gt, false, center_dist)
}

pub fn fde(pred: &[Vec<BoundingBox>], gt: &[Vec<BoundingBox>]) -> Result<f64> {
    mean_over(pred, gt, true, center_dist)
}

pub fn arb(pred: &[Vec<BoundingBox>], gt: &[Vec<BoundingBox>]) -> Result<f64> {
    mean_over(pred, gt, false, corner_rmse)
}

pub fn frb(pred: &[Vec<BoundingBox>], gt: &[Vec<BoundingBox>]) -> Result<f64> {
    mean_over(pred, gt, true, corner_rmse)
}

pub fn report(pred: &[Vec<BoundingBox>], gt: &[Vec<BoundingBox>]) -> Result<MetricsReport> {
    let horizon = check(pred, gt)?;
    Ok(MetricsReport {
        ade: ade(pred, gt)?,
        fde: fde(pred, gt)?,
        arb: arb(pred, gt)?,
        frb: frb(pred, gt)?,
        n_samples: pred.len(),
        horizon,
    })
}

/// `%.6g`-style formatting: six significant digits, trailing zeros
/// trimmed, scientific notation outside `1e-4 ≤ |x| < 1e6`.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

impl MetricsReport {
    pub fn csv_row(&self, dataset: &str) -> String {
        let mut row = String::new();
        write!(
            row,
            "{dataset},{},{},{},{},{},{}",
            self.horizon,
            format_sig6(self.ade),
            format_sig6(self.fde),
            format_sig6(self.arb),
            format_sig6(self.frb),
            self.n_samples
        )
        .expect("writing to a String");
        row
    }
}

/// Header plus one row per `(dataset, report)`.
pub fn to_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (name, r) in rows {
        out.push_str(&r.csv_row(name));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox { x, y, w, h }
    }

    #[test]
    fn identity_and_three_four_five() {
        let gt = vec![vec![bb(0., 0., 10., 10.), bb(5., 5., 10., 10.)]];
        let r = report(&gt, &gt).unwrap();
        assert_eq!((r.ade, r.fde, r.arb, r.frb), (0.0, 0.0, 0.0, 0.0));
        let pred = vec![vec![bb(3., 4., 10., 10.), bb(5., 5., 10., 10.)]];
        assert_eq!(ade(&pred, &gt).unwrap(), 2.5);
        assert_eq!(fde(&pred, &gt).unwrap(), 0.0);
    }

    #[test]
    fn unit_corner_error() {
        // shifting the center by (1,1) moves all four corners by exactly 1
        let gt = vec![vec![bb(10., 20., 4., 6.); 3]; 2];
        let pred = vec![vec![bb(11., 21., 4., 6.); 3]; 2];
        assert_eq!(arb(&pred, &gt).unwrap(), 1.0);
        assert_eq!(frb(&pred, &gt).unwrap(), 1.0);
    }

    #[test]
    fn errors() {
        let a = vec![vec![bb(0., 0., 1., 1.); 2]];
        assert!(matches!(ade(&[], &[]), Err(Error::EmptyDataset(_))));
        assert!(ade(&a, &[]).is_err());
        assert!(ade(&a, &[vec![bb(0., 0., 1., 1.); 3]]).is_err());
        assert!(ade(&[vec![]], &[vec![]]).is_err());
    }

    #[test]
    fn csv_formatting() {
        assert_eq!(format_sig6(7.72), "7.72");
        assert_eq!(format_sig6(16.987654321), "16.9877");
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(1234567.0), "1.23457e6");
        assert_eq!(format_sig6(0.000012345678), "1.23457e-5");
        assert_eq!(format_sig6(999999.7), "1e6");
        assert_eq!(format_sig6(100.0), "100");
        let r = MetricsReport {
            ade: 1.0,
            fde: 2.5,
            arb: 1.0 / 3.0,
            frb: 10.0,
            n_samples: 7,
            horizon: 45,
        };
        assert_eq!(
            to_csv(&[("synth".into(), r)]),
            "dataset,horizon,ade,fde,arb,frb,n_samples\nsynth,45,1,2.5,0.333333,10,7\n"
        );
    }

    fn arb_batch() -> impl Strategy<Value = (Vec<Vec<BoundingBox>>, Vec<Vec<BoundingBox>>)> {
        let bx = || (-500.0..500.0f64, -500.0..500.0f64, 1.0..100.0f64, 1.0..100.0f64).prop_map(|(x, y, w, h)| bb(x, y, w, h));
        (1usize..6, 1usize..8).prop_flat_map(move |(n, t)| {
            (
                prop::collection::vec(prop::collection::vec(bx(), t), n),
                prop::collection::vec(prop::collection::vec(bx(), t), n),
            )
        })
    }

    proptest! {
        #[test]
        fn translation_invariant((pred, gt) in arb_batch(), dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
            let shift = |v: &Vec<Vec<BoundingBox>>| -> Vec<Vec<BoundingBox>> {
                v.iter().map(|s| s.iter().map(|b| bb(b.x + dx, b.y + dy, b.w, b.h)).collect()).collect()
            };
            let (a, b) = (report(&pred, &gt).unwrap(), report(&shift(&pred), &shift(&gt)).unwrap());
            for (u, v) in [(a.ade, b.ade), (a.fde, b.fde), (a.arb, b.arb), (a.frb, b.frb)] {
                prop_assert!((u - v).abs() <= 1e-12, "{} vs {}", u, v);
            }
        }

        #[test]
        fn ordering_bounds_and_permutation((pred, gt) in arb_batch()) {
            let r = report(&pred, &gt).unwrap();
            let max_d = pred.iter().zip(&gt)
                .flat_map(|(p, g)| p.iter().zip(g).map(|(a, b)| (a.x - b.x).hypot(a.y - b.y)))
                .fold(0.0, f64::max);
            prop_assert!(r.ade <= max_d + 1e-12 && r.fde <= max_d + 1e-12);
            prop_assert!(r.ade >= 0.0 && r.fde >= 0.0 && r.arb >= 0.0 && r.frb >= 0.0);
            if r.horizon == 1 {
                prop_assert_eq!(r.ade, r.fde);
            }
            let rev = |v: &Vec<Vec<BoundingBox>>| v.iter().rev().cloned().collect::<Vec<_>>();
            let q = report(&rev(&pred), &rev(&gt)).unwrap();
            prop_assert!((q.ade - r.ade).abs() < 1e-12 * r.ade.max(1.0));
            prop_assert!((q.arb - r.arb).abs() < 1e-12 * r.arb.max(1.0));
        }
    }
}
