mod common;

use common::*;
use rand::Rng;
use tivis_core::nn::{self, Dense, Layer, Model, PixelNorm};
use tivis_core::screening::{
    classify_report, invert, zero_square, zero_square_with, ScreenError, ScreenRect, Variant,
};
use tivis_core::{ImageBuffer, Tensor};

fn interior_image(r: &mut TestRng, n: usize) -> ImageBuffer {
    // no pixel is 0 or mid-gray, so every screened pixel visibly changes
    let data = (0..n * n * 3).map(|_| r.gen_range(1.0..127.0)).collect();
    ImageBuffer::new(n, n, data).unwrap()
}

fn changed_pixels(a: &ImageBuffer, b: &ImageBuffer) -> usize {
    let (h, w) = a.dims();
    (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| a.pixel(y, x) != b.pixel(y, x))
        .count()
}

#[test]
fn screening_changes_exactly_the_rectangle() {
    let mut r = rng(31);
    for _ in 0..30 {
        let n = r.gen_range(4..20);
        let img = interior_image(&mut r, n);
        let w = r.gen_range(1..=n);
        let h = r.gen_range(1..=n);
        let rect = ScreenRect::new(r.gen_range(0..=n - w), r.gen_range(0..=n - h), w, h);
        for norm in [PixelNorm::Unit01, PixelNorm::Signed11] {
            let out = zero_square_with(&img, rect, norm).unwrap();
            assert_eq!(changed_pixels(&img, &out), w * h);
            for y in 0..n {
                for x in 0..n {
                    if !rect.contains(x, y) {
                        assert_eq!(out.pixel(y, x), img.pixel(y, x));
                    }
                }
            }
        }
    }
}

fn model_with(norm: PixelNorm, n: usize) -> Model {
    let mut r = rng(8);
    Model::new(
        vec![Layer::Flatten, Layer::Dense(Dense::new(random_tensor(&mut r, vec![4, 3 * n * n], 0.1), vec![0.0; 4]))],
        [3, n, n],
        class_names(4),
        norm,
    )
    .unwrap()
}

#[test]
fn signed_model_sees_exact_zero_in_region() {
    let n = 10;
    let model = model_with(PixelNorm::Signed11, n);
    let img = interior_image(&mut rng(2), n);
    let rect = ScreenRect::new(2, 3, 5, 4);
    let input = model.normalize(&zero_square(&img, rect, &model).unwrap()).unwrap();
    for c in 0..3 {
        for y in 0..n {
            for x in 0..n {
                let v = input.data()[(c * n + y) * n + x];
                if rect.contains(x, y) {
                    assert_eq!(v.to_bits(), 0.0f64.to_bits());
                } else {
                    assert_ne!(v, 0.0);
                }
            }
        }
    }
}

#[test]
fn full_screen_of_unit_model_is_all_zero_input() {
    let n = 7;
    let model = model_with(PixelNorm::Unit01, n);
    let img = interior_image(&mut rng(3), n);
    let out = zero_square(&img, ScreenRect::full(&img), &model).unwrap();
    let input = model.normalize(&out).unwrap();
    assert!(input.data().iter().all(|v| v.to_bits() == 0));
    // an all-zero input leaves only the biases
    let pred = nn::forward(&model, &out).unwrap();
    assert!(pred.logits.iter().all(|z| *z == 0.0));
}

#[test]
fn rectangle_outside_image_rejected() {
    let img = ImageBuffer::gray(5, 5, 1.0);
    let err = zero_square_with(&img, ScreenRect::new(3, 0, 3, 1), PixelNorm::Unit01).unwrap_err();
    assert!(matches!(err, ScreenError::OutOfBounds { .. }));
    assert!(err.to_string().contains("3,0,3,1"));
}

#[test]
fn inversion_is_an_involution_on_integers() {
    let img = random_int_image(&mut rng(4), 6, 6);
    let inv = invert(&img);
    for (a, b) in img.data().iter().zip(inv.data()) {
        assert_eq!(a + b, 255.0);
    }
    assert_eq!(invert(&inv), img);
}

#[test]
fn class_report_rows_follow_inputs_and_variants() {
    let n = 6;
    let model = model_with(PixelNorm::Unit01, n);
    let mut r = rng(10);
    let images: Vec<(String, ImageBuffer)> =
        (0..3).map(|i| (format!("img{i}"), random_int_image(&mut r, n, n))).collect();
    let variants = [Variant::Inverted, Variant::Original, Variant::Screened];
    let rect = ScreenRect::new(1, 1, 2, 2);
    let rep = classify_report(&model, &images, 2, &variants, Some(rect)).unwrap();
    assert_eq!(rep.rows.len(), 9);
    for (i, row) in rep.rows.iter().enumerate() {
        let (id, img) = &images[i / 3];
        assert_eq!(&row.image_id, id);
        assert_eq!(row.variant, variants[i % 3]);
        assert_eq!(row.top.len(), 2);
        let input = match row.variant {
            Variant::Original => img.clone(),
            Variant::Inverted => invert(img),
            Variant::Screened => zero_square(img, rect, &model).unwrap(),
        };
        let pred = nn::forward(&model, &input).unwrap();
        for (rank, score) in row.top.iter().zip(pred.top_k(2)) {
            assert_eq!(rank.class_name, score.class_name);
            assert_eq!(rank.percent, 100.0 * score.confidence);
        }
        assert!(row.top[0].percent >= row.top[1].percent);
    }
    assert!(matches!(
        classify_report(&model, &images, 0, &variants, Some(rect)),
        Err(ScreenError::ZeroK)
    ));
    assert!(matches!(
        classify_report(&model, &images, 1, &[Variant::Screened], None),
        Err(ScreenError::MissingRect)
    ));
    // k beyond the class count lists every class
    let all = classify_report(&model, &images, 10, &[Variant::Original], None).unwrap();
    let total: f64 = all.rows[0].top.iter().map(|c| c.percent).sum();
    assert_eq!(all.rows[0].top.len(), 4);
    assert!((total - 100.0).abs() < 1e-9);
}

#[test]
fn zero_value_depends_on_normalization() {
    let _ = Tensor::zeros(vec![1]);
    assert_eq!(PixelNorm::Unit01.zero_display_value(), 0.0);
    assert_eq!(PixelNorm::Signed11.zero_display_value(), 127.5);
    assert_eq!(PixelNorm::Signed11.normalize(127.5), 0.0);
}
