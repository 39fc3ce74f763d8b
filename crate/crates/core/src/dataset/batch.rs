//! Random ray batches over the training frames.

use rand::{Rng, RngCore};

use crate::dataset::scene::{SceneDataset, Split};

/// Ground truth for `len()` rays, each tied to one training pixel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RayBatch {
    pub frame: Vec<usize>,
    /// `(column, row)`.
    pub pixel: Vec<(u32, u32)>,
    /// `3 * len` values in [0,1].
    pub rgb: Vec<f32>,
    /// Normalised by the scene bounds.
    pub temp_norm: Vec<f64>,
    pub valid: Vec<bool>,
    pub appearance: Vec<usize>,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.frame.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame.is_empty()
    }

    fn push(&mut self, data: &SceneDataset, frame: usize, pixel: usize) {
        let f = &data.frames[frame];
        let w = f.camera.width as usize;
        let [lo, hi] = data.t_bounds();
        self.frame.push(frame);
        self.pixel.push(((pixel % w) as u32, (pixel / w) as u32));
        self.rgb.extend_from_slice(&f.rgb[pixel * 3..pixel * 3 + 3]);
        self.temp_norm.push((f.thermal.temps[pixel] - lo) / (hi - lo));
        self.valid.push(f.thermal.valid[pixel]);
        self.appearance
            .push(f.appearance.expect("training frames carry an appearance row"));
    }
}

/// Draws `n` rays uniformly over all (training frame, pixel) pairs.
pub fn sample_ray_batch(data: &SceneDataset, n: usize, rng: &mut dyn RngCore) -> RayBatch {
    let train = data.indices(Split::Train);
    let mut cumulative = Vec::with_capacity(train.len());
    let mut total = 0usize;
    for &i in &train {
        total += data.frames[i].thermal.len();
        cumulative.push(total);
    }
    let mut batch = RayBatch::default();
    if n == 0 || total == 0 {
        return batch;
    }
    for _ in 0..n {
        let g = rng.random_range(0..total);
        let k = cumulative.partition_point(|c| *c <= g);
        let start = if k == 0 { 0 } else { cumulative[k - 1] };
        batch.push(data, train[k], g - start);
    }
    batch
}

/// Every pixel of one frame, in row-major order.
pub fn frame_batch(data: &SceneDataset, frame: usize) -> RayBatch {
    let mut batch = RayBatch::default();
    for p in 0..data.frames[frame].thermal.len() {
        batch.push(data, frame, p);
    }
    batch
}
