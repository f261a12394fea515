//! Scalar bilinear interpolation and the reference (single-threaded) resize.
//!
//! Every output pixel goes through the same three steps: map the final-image
//! coordinate back into the source, pick the four neighbours with their
//! fractional offsets, and blend. The tiled executor reuses [`interpolate_into`]
//! so both paths perform identical arithmetic for a given scalar type.

use thiserror::Error;

use crate::image::ImageBuffer;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum InterpError {
    #[error("scale must be a positive finite number")]
    NonPositiveScale,
    #[error("scaled output would be {width}x{height}; both dimensions must be at least 1")]
    EmptyOutput { width: usize, height: usize },
}

/// Position of an output pixel in source-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceCoord<T = f64> {
    pub x_p: T,
    pub y_p: T,
}

/// The four neighbouring source pixels and the fractional offsets of `P` between them.
///
/// Layout: 1 = top-left, 2 = top-right, 3 = bottom-left, 4 = bottom-right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborSet<T = f64> {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
    pub x3: usize,
    pub y3: usize,
    pub x4: usize,
    pub y4: usize,
    pub offset_x: T,
    pub offset_y: T,
}

fn check_scale<T: Real>(scale: T) -> Result<(), InterpError> {
    if scale > T::zero() && scale.is_finite() {
        Ok(())
    } else {
        Err(InterpError::NonPositiveScale)
    }
}

/// Maps final-image pixel `(x_f, y_f)` to the source, clamped into `[0, w-1] x [0, h-1]`.
pub fn map_final_to_source<T: Real>(
    x_f: usize,
    y_f: usize,
    scale: T,
    src_width: usize,
    src_height: usize,
) -> Result<SourceCoord<T>, InterpError> {
    check_scale(scale)?;
    Ok(map_unchecked(x_f, y_f, scale, src_width, src_height))
}

#[inline]
fn map_unchecked<T: Real>(
    x_f: usize,
    y_f: usize,
    scale: T,
    src_width: usize,
    src_height: usize,
) -> SourceCoord<T> {
    let max_x = T::from_usize_lossy(src_width.saturating_sub(1));
    let max_y = T::from_usize_lossy(src_height.saturating_sub(1));
    let x_p = T::from_usize_lossy(x_f) / scale;
    let y_p = T::from_usize_lossy(y_f) / scale;
    SourceCoord {
        x_p: x_p.max(T::zero()).min(max_x),
        y_p: y_p.max(T::zero()).min(max_y),
    }
}

/// Neighbour indices and offsets for a pre-clamped source coordinate.
///
/// The right and bottom neighbours clamp to the last valid column/row, so on
/// the image edge the blend collapses onto the edge pixels.
#[inline]
pub fn neighbors_and_offsets<T: Real>(
    p: SourceCoord<T>,
    src_width: usize,
    src_height: usize,
) -> NeighborSet<T> {
    // Coordinates are non-negative, so truncation is floor.
    let x1 = p.x_p.floor().to_usize().unwrap_or(0).min(src_width - 1);
    let y1 = p.y_p.floor().to_usize().unwrap_or(0).min(src_height - 1);
    let x2 = (x1 + 1).min(src_width - 1);
    let y3 = (y1 + 1).min(src_height - 1);
    NeighborSet {
        x1,
        y1,
        x2,
        y2: y1,
        x3: x1,
        y3,
        x4: x2,
        y4: y3,
        offset_x: p.x_p - T::from_usize_lossy(x1),
        offset_y: p.y_p - T::from_usize_lossy(y1),
    }
}

/// Standard bilinear blend of the four neighbour samples.
#[inline]
pub fn blend<T: Real>(n: &NeighborSet<T>, f1: T, f2: T, f3: T, f4: T) -> T {
    let one = T::one();
    let top = n.offset_x * f2 + (one - n.offset_x) * f1;
    let bottom = n.offset_x * f4 + (one - n.offset_x) * f3;
    (one - n.offset_y) * top + n.offset_y * bottom
}

/// Rounds half up and clamps to the 8-bit range.
#[inline]
pub fn quantize<T: Real>(v: T) -> u8 {
    let r = (v + T::half()).floor();
    r.max(T::zero())
        .min(T::from_f64_lossy(255.0))
        .to_u8()
        .unwrap_or(0)
}

/// Output dimensions `(floor(w * scale), floor(h * scale))`.
pub fn output_dims<T: Real>(
    width: usize,
    height: usize,
    scale: T,
) -> Result<(usize, usize), InterpError> {
    check_scale(scale)?;
    let scaled = |n: usize| {
        (T::from_usize_lossy(n) * scale)
            .floor()
            .to_usize()
            .unwrap_or(usize::MAX)
    };
    let (w, h) = (scaled(width), scaled(height));
    if w == 0 || h == 0 {
        return Err(InterpError::EmptyOutput { width: w, height: h });
    }
    Ok((w, h))
}

/// Computes all channels of output pixel `(x_f, y_f)` into `out`.
///
/// `scale` must already be validated.
#[inline]
pub fn interpolate_into<T: Real>(src: &ImageBuffer, x_f: usize, y_f: usize, scale: T, out: &mut [u8]) {
    let (w, h) = (src.width(), src.height());
    let p = map_unchecked(x_f, y_f, scale, w, h);
    let n = neighbors_and_offsets(p, w, h);
    let to_t = |v: u8| T::from_u8(v).unwrap_or_else(T::zero);
    for (c, slot) in out.iter_mut().enumerate().take(src.channels()) {
        let v = blend(
            &n,
            to_t(src.get(n.x1, n.y1, c)),
            to_t(src.get(n.x2, n.y2, c)),
            to_t(src.get(n.x3, n.y3, c)),
            to_t(src.get(n.x4, n.y4, c)),
        );
        *slot = quantize(v);
    }
}

/// Reference resize: visits every output pixel in row-major order on one thread.
pub fn resize_scalar<T: Real>(src: &ImageBuffer, scale: T) -> Result<ImageBuffer, InterpError> {
    let (out_w, out_h) = output_dims(src.width(), src.height(), scale)?;
    let ch = src.channels();
    let mut samples = vec![0u8; out_w * out_h * ch];
    for y in 0..out_h {
        for x in 0..out_w {
            let at = (y * out_w + x) * ch;
            interpolate_into(src, x, y, scale, &mut samples[at..at + ch]);
        }
    }
    Ok(ImageBuffer::new(out_w, out_h, ch, samples).expect("output dimensions are consistent"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_bilinear(img: &[[f64; 2]; 2], ox: f64, oy: f64) -> f64 {
        // weights written as the product form, independent of `blend`
        img[0][0] * (1.0 - ox) * (1.0 - oy)
            + img[0][1] * ox * (1.0 - oy)
            + img[1][0] * (1.0 - ox) * oy
            + img[1][1] * ox * oy
    }

    #[test]
    fn mapping_examples() {
        let p = map_final_to_source(10, 4, 2.0, 100, 100).unwrap();
        assert_eq!((p.x_p, p.y_p), (5.0, 2.0));
        let p = map_final_to_source(10, 7, 4.0, 100, 100).unwrap();
        assert_eq!((p.x_p, p.y_p), (2.5, 1.75));
        let p = map_final_to_source(13, 6, 1.0, 100, 100).unwrap();
        assert_eq!((p.x_p, p.y_p), (13.0, 6.0));
        let p = map_final_to_source(50, 50, 2.0, 10, 10).unwrap();
        assert_eq!((p.x_p, p.y_p), (9.0, 9.0));
        assert_eq!(map_final_to_source(1, 1, 0.0, 4, 4), Err(InterpError::NonPositiveScale));
        assert_eq!(map_final_to_source(1, 1, -2.0, 4, 4), Err(InterpError::NonPositiveScale));
        assert_eq!(map_final_to_source(1, 1, f64::NAN, 4, 4), Err(InterpError::NonPositiveScale));
    }

    #[test]
    fn neighbor_examples() {
        let n = neighbors_and_offsets(SourceCoord { x_p: 2.5, y_p: 1.75 }, 10, 10);
        assert_eq!((n.x1, n.x3, n.x2, n.x4), (2, 2, 3, 3));
        assert_eq!((n.y1, n.y2, n.y3, n.y4), (1, 1, 2, 2));
        assert_eq!((n.offset_x, n.offset_y), (0.5, 0.75));

        let n = neighbors_and_offsets(SourceCoord { x_p: 4.0, y_p: 4.0 }, 10, 10);
        assert_eq!((n.x1, n.x2), (4, 5));
        assert_eq!((n.offset_x, n.offset_y), (0.0, 0.0));

        let n = neighbors_and_offsets(SourceCoord { x_p: 9.0, y_p: 9.0 }, 10, 10);
        assert_eq!((n.x1, n.x2, n.y1, n.y3), (9, 9, 9, 9));
    }

    #[test]
    fn edge_clamp_blends_to_corner_pixel() {
        let samples: Vec<u8> = (0..100).map(|i| (i * 2 + 1) as u8).collect();
        let img = ImageBuffer::new(10, 10, 1, samples).unwrap();
        let n = neighbors_and_offsets(SourceCoord { x_p: 9.0, y_p: 9.0 }, 10, 10);
        let f = |x, y| img.get(x, y, 0) as f64;
        let v = blend(&n, f(n.x1, n.y1), f(n.x2, n.y2), f(n.x3, n.y3), f(n.x4, n.y4));
        assert_eq!(v, img.get(9, 9, 0) as f64);
        // brute force every output pixel that lands on the last source pixel
        let out = resize_scalar(&img, 3.0).unwrap();
        for y in 27..30 {
            for x in 27..30 {
                assert_eq!(out.get(x, y, 0), img.get(9, 9, 0));
            }
        }
    }

    #[test]
    fn blend_examples() {
        let zero = NeighborSet { x1: 0, y1: 0, x2: 1, y2: 0, x3: 0, y3: 1, x4: 1, y4: 1, offset_x: 0.0, offset_y: 0.0 };
        assert_eq!(blend(&zero, 7.0, 99.0, 99.0, 99.0), 7.0);
        let mid = NeighborSet { offset_x: 0.5, offset_y: 0.5, ..zero };
        assert_eq!(blend(&mid, 10.0, 20.0, 30.0, 40.0), 25.0);
        let odd = NeighborSet { offset_x: 0.3, offset_y: 0.9, ..zero };
        assert!((blend(&odd, 33.0_f64, 33.0, 33.0, 33.0) - 33.0).abs() < 1e-12);
    }

    #[test]
    fn blend_is_not_the_misprinted_variant() {
        // The variant with (1 - offsetY) on f3 would give 0.75*15 + 0.25*(0.5*40 + 0.75*30) = 21.875 here.
        let n = NeighborSet { x1: 0, y1: 0, x2: 1, y2: 0, x3: 0, y3: 1, x4: 1, y4: 1, offset_x: 0.5, offset_y: 0.25 };
        let expected = naive_bilinear(&[[10.0, 20.0], [30.0, 40.0]], 0.5, 0.25);
        assert_eq!(blend(&n, 10.0, 20.0, 30.0, 40.0), expected);
        assert_eq!(expected, 20.0);
    }

    #[test]
    fn resize_examples() {
        let px = ImageBuffer::new(1, 1, 1, vec![42]).unwrap();
        let out = resize_scalar(&px, 5.0).unwrap();
        assert_eq!((out.width(), out.height()), (5, 5));
        assert!(out.samples().iter().all(|&v| v == 42));

        let img = ImageBuffer::new(2, 2, 1, vec![10, 20, 30, 40]).unwrap();
        let out = resize_scalar(&img, 2.0).unwrap();
        assert_eq!((out.width(), out.height()), (4, 4));
        assert_eq!(out.get(1, 1, 0), 25);
        assert_eq!(out.get(0, 0, 0), 10);
        assert_eq!(out.get(1, 0, 0), 15);
        assert_eq!(out.get(3, 3, 0), 40);

        assert_eq!(resize_scalar(&img, 1.0).unwrap(), img);
        assert_eq!(resize_scalar(&img, 0.0), Err(InterpError::NonPositiveScale));
        assert_eq!(
            resize_scalar(&img, 0.25),
            Err(InterpError::EmptyOutput { width: 0, height: 0 })
        );
        let out32 = resize_scalar(&img, 2.0_f32).unwrap();
        assert_eq!(out32.get(1, 1, 0), 25);
    }

    #[test]
    fn fractional_scale_dims() {
        assert_eq!(output_dims(3, 5, 2.5).unwrap(), (7, 12));
        assert_eq!(output_dims(10, 10, 0.5).unwrap(), (5, 5));
    }

    #[test]
    fn quantize_rounds_half_up_and_clamps() {
        assert_eq!(quantize(24.5_f64), 25);
        assert_eq!(quantize(24.49_f64), 24);
        assert_eq!(quantize(300.0_f64), 255);
        assert_eq!(quantize(-3.0_f64), 0);
    }

    fn arb_image(max: usize) -> impl Strategy<Value = ImageBuffer> {
        (1..=max, 1..=max, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(w, h, c)| {
            proptest::collection::vec(any::<u8>(), w * h * c)
                .prop_map(move |s| ImageBuffer::new(w, h, c, s).unwrap())
        })
    }

    proptest! {
        #[test]
        fn blend_stays_within_neighbors(
            f in proptest::array::uniform4(0u8..=255),
            ox in 0.0f64..1.0,
            oy in 0.0f64..1.0,
        ) {
            let n = NeighborSet { x1: 0, y1: 0, x2: 1, y2: 0, x3: 0, y3: 1, x4: 1, y4: 1, offset_x: ox, offset_y: oy };
            let fv = f.map(f64::from);
            let v = blend(&n, fv[0], fv[1], fv[2], fv[3]);
            let lo = fv.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = fv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            let naive = naive_bilinear(&[[fv[0], fv[1]], [fv[2], fv[3]]], ox, oy);
            prop_assert!((v - naive).abs() < 1e-9);
        }

        #[test]
        fn identity_scale_copies(img in arb_image(12)) {
            prop_assert_eq!(resize_scalar(&img, 1.0).unwrap(), img);
        }

        #[test]
        fn constant_images_stay_constant(
            w in 1usize..10, h in 1usize..10, v in any::<u8>(), scale in 0.5f64..5.0,
        ) {
            let img = ImageBuffer::filled(w, h, 1, v).unwrap();
            if let Ok(out) = resize_scalar(&img, scale) {
                prop_assert!(out.samples().iter().all(|&s| s == v));
            }
        }

        #[test]
        fn channels_resize_independently(
            img in arb_image(8).prop_filter("rgb", |i| i.channels() == 3),
            scale in prop_oneof![Just(1.0f64), Just(2.0), Just(2.5), Just(3.0)],
        ) {
            let whole = resize_scalar(&img, scale).unwrap();
            let planes: Vec<_> = (0..3).map(|c| resize_scalar(&img.channel(c), scale).unwrap()).collect();
            prop_assert_eq!(whole, ImageBuffer::interleave(&planes).unwrap());
        }

        #[test]
        fn neighbor_structure(x in 0.0f64..31.0, y in 0.0f64..17.0) {
            let n = neighbors_and_offsets(SourceCoord { x_p: x, y_p: y }, 32, 18);
            prop_assert_eq!(n.x1, n.x3);
            prop_assert_eq!(n.x2, n.x4);
            prop_assert_eq!(n.y1, n.y2);
            prop_assert_eq!(n.y3, n.y4);
            prop_assert!(n.x2 == n.x1 + 1 || (n.x2 == n.x1 && n.x1 == 31));
            prop_assert!(n.y3 == n.y1 + 1 || (n.y3 == n.y1 && n.y1 == 17));
            prop_assert!((0.0..1.0).contains(&n.offset_x));
            prop_assert!((0.0..1.0).contains(&n.offset_y));
        }
    }
}
