//! Published reference numbers for the CNN pipeline and the iterative
//! baseline. They are carried in reports for comparison only; nothing in
//! this crate is expected to reproduce them.

/// Parameter MAE of the CNN regressor, ordered `[a1, a2, a3, eps1, eps2,
/// x0, y0, z0]`, pooled over all test images.
pub const CNN_PARAM_MAE_ALL: [f64; 8] = [1.134, 1.187, 1.248, 0.017, 0.017, 1.953, 1.864, 2.639];

/// Same, per scene superquadric count 1..=5.
pub const CNN_PARAM_MAE_BY_COUNT: [(usize, [f64; 8]); 5] = [
    (1, [0.515, 0.555, 0.537, 0.009, 0.008, 0.957, 0.925, 2.154]),
    (2, [0.681, 0.736, 0.728, 0.011, 0.010, 1.165, 1.093, 2.181]),
    (3, [0.930, 0.984, 1.036, 0.013, 0.013, 1.528, 1.448, 2.386]),
    (4, [1.580, 1.646, 1.708, 0.026, 0.025, 3.066, 2.966, 3.110]),
    (5, [1.201, 1.241, 1.357, 0.017, 0.017, 1.776, 1.669, 2.685]),
];

/// Mask R-CNN instance segmentation: mAP (0.50:0.95), mAP50, mAP75.
pub const MASK_RCNN_MAP: [f64; 3] = [85.57, 97.33, 95.95];

/// Whole-image reconstruction MAE on composed real-scan scenes.
pub const CNN_RECONSTRUCTION_MAE: f64 = 2.79;
pub const ITERATIVE_RECONSTRUCTION_MAE: f64 = 1.78;

/// Seconds per image: iterative baseline, CNN on GPU, CNN single-threaded CPU.
pub const ITERATIVE_SECONDS_PER_IMAGE: f64 = 10.0;
pub const CNN_GPU_SECONDS_PER_IMAGE: f64 = 0.11;
pub const CNN_CPU_SECONDS_PER_IMAGE: f64 = 5.0;

/// Images per split and scene count 1..=5 of the published dataset.
pub const DATASET_TRAIN: [usize; 5] = [15882, 16108, 15930, 15983, 16097];
pub const DATASET_VAL: [usize; 5] = [3989, 3944, 4020, 3948, 4099];
pub const DATASET_TEST: [usize; 5] = [3949, 4023, 3996, 4059, 3973];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_totals() {
        assert_eq!(DATASET_TRAIN.iter().sum::<usize>(), 80_000);
        assert_eq!(DATASET_VAL.iter().sum::<usize>(), 20_000);
        assert_eq!(DATASET_TEST.iter().sum::<usize>(), 20_000);
    }
}
