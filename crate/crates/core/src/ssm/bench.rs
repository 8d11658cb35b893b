//! Wall-clock timing of the sequential scan in single precision.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scan::{scan_forward, ScanDims};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanTiming {
    pub len: usize,
    pub d_inner: usize,
    pub d_state: usize,
    pub iters: usize,
    /// Median seconds per scan over `iters` runs.
    pub seconds: f64,
}

impl ScanTiming {
    pub const CSV_HEADER: &'static str = "len,d_inner,d_state,iters,seconds_per_scan,steps_per_sec";

    pub fn steps_per_sec(&self) -> f64 {
        self.len as f64 / self.seconds
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:e},{:.1}",
            self.len,
            self.d_inner,
            self.d_state,
            self.iters,
            self.seconds,
            self.steps_per_sec()
        )
    }
}

/// Times a batch-1 `f32` scan of length `len` on random inputs; one warm-up
/// run precedes the `iters` timed runs.
pub fn time_scan(len: usize, d_inner: usize, d_state: usize, iters: usize, seed: u64) -> ScanTiming {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |n: usize, lo: f32, hi: f32| (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f32>>();
    let delta = fill(len * d_inner, 0.001, 0.1);
    let a = fill(d_inner * d_state, -2.0, -0.5);
    let b = fill(len * d_state, -1.0, 1.0);
    let c = fill(len * d_state, -1.0, 1.0);
    let u = fill(len * d_inner, -1.0, 1.0);
    let d_skip = fill(d_inner, 0.5, 1.5);
    let dims = ScanDims {
        batch: 1,
        len,
        d_inner,
        d_state,
    };
    let mut y = vec![0.0f32; len * d_inner];
    let mut run = || {
        let t = Instant::now();
        scan_forward(dims, &delta, &a, &b, &c, &u, &d_skip, &mut y, None);
        std::hint::black_box(&y);
        t.elapsed().as_secs_f64()
    };
    run();
    let mut times: Vec<f64> = (0..iters.max(1)).map(|_| run()).collect();
    times.sort_by(f64::total_cmp);
    ScanTiming {
        len,
        d_inner,
        d_state,
        iters: times.len(),
        seconds: times[times.len() / 2],
    }
}
