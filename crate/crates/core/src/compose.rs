//! Composition of range rasters by shift and pixelwise maximum.

use crate::error::{Error, Result};
use crate::render::RangeImage;

/// Translates `img` by `(dx, dy)` pixels; uncovered pixels become background.
pub fn shift_range(img: &RangeImage, dx: i64, dy: i64) -> RangeImage {
    let (w, h) = (img.width as i64, img.height as i64);
    let mut out = RangeImage::new(img.width, img.height);
    for y in 0..h {
        let sy = y - dy;
        if !(0..h).contains(&sy) {
            continue;
        }
        for x in 0..w {
            let sx = x - dx;
            if (0..w).contains(&sx) {
                out.depth[(y * w + x) as usize] = img.depth[(sy * w + sx) as usize];
            }
        }
    }
    out
}

/// Pixelwise maximum of the shifted inputs. Closer surfaces carry larger
/// depth, so the maximum keeps the visible one and background never wins.
pub fn compose(inputs: &[(RangeImage, (i64, i64))]) -> Result<RangeImage> {
    if inputs.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "compose needs at least 2 inputs, got {}",
            inputs.len()
        )));
    }
    let (w, h) = (inputs[0].0.width, inputs[0].0.height);
    if let Some((bad, _)) = inputs.iter().find(|(img, _)| !img.same_size(w, h)) {
        return Err(Error::SizeMismatch(format!(
            "{}x{} input among {w}x{h} inputs",
            bad.width, bad.height
        )));
    }
    let mut out = RangeImage::new(w, h);
    for (img, (dx, dy)) in inputs {
        let s = shift_range(img, *dx, *dy);
        for (o, v) in out.depth.iter_mut().zip(&s.depth) {
            if *v > *o {
                *o = *v;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: &[f32]) -> RangeImage {
        RangeImage::from_vec(v.len() as u32, 1, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_and_union() {
        let a = img(&[0.0, 3.0, 5.0, 0.0]);
        assert_eq!(compose(&[(a.clone(), (0, 0)), (a.clone(), (0, 0))]).unwrap(), a);
        let b = img(&[2.0, 0.0, 0.0, 0.0]);
        assert_eq!(compose(&[(a.clone(), (0, 0)), (b, (0, 0))]).unwrap(), img(&[2.0, 3.0, 5.0, 0.0]));
    }

    #[test]
    fn shifted_overlap_takes_larger_depth() {
        let a = img(&[0.0, 3.0, 5.0, 0.0]);
        let out = compose(&[(a.clone(), (0, 0)), (a, (1, 0))]).unwrap();
        assert_eq!(out, img(&[0.0, 3.0, 5.0, 5.0]));
    }

    #[test]
    fn bad_inputs() {
        let a = img(&[1.0]);
        assert!(compose(&[(a.clone(), (0, 0))]).is_err());
        assert!(compose(&[(a, (0, 0)), (img(&[1.0, 2.0]), (0, 0))]).is_err());
        assert_eq!(shift_range(&img(&[1.0, 2.0]), -5, 0), img(&[0.0, 0.0]));
    }
}
