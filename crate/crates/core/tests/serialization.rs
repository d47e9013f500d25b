mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use tivis_core::nn::{self, decode_model, encode_model, FormatError};
use tivis_core::ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm, PpmError};
use tivis_core::{load_model, save_model, ImageBuffer};

#[test]
fn model_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(88);
    for m in 0..4 {
        let model = random_model(&mut r, 12, 5);
        let path = dir.path().join(format!("m{m}.gbx"));
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, model);
        for _ in 0..25 {
            let img = random_image(&mut r, 12, 12);
            let a = nn::forward(&model, &img).unwrap();
            let b = nn::forward(&back, &img).unwrap();
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.logits), bits(&b.logits));
        }
    }
}

#[test]
fn corrupt_model_files_are_diagnosed() {
    let model = random_model(&mut rng(1), 8, 3);
    let bytes = encode_model(&model).unwrap();
    assert_eq!(&bytes[..4], b"GBXM");

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_model(&bad), Err(FormatError::BadMagic(_))));

    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(decode_model(&bad), Err(FormatError::UnsupportedVersion(9))));

    let short = &bytes[..bytes.len() - 8];
    let err = decode_model(short).unwrap_err();
    assert!(matches!(err, FormatError::LengthMismatch { .. }), "{err}");

    let mut long = bytes.clone();
    long.extend_from_slice(&[0; 8]);
    assert!(decode_model(&long).is_err());

    assert!(decode_model(&bytes[..3]).is_err());
    assert!(load_model("/nonexistent/dir/model.gbx").is_err());
}

#[test]
fn one_pixel_ppm_bytes() {
    let img = ImageBuffer::new(1, 1, vec![255.0, 0.0, 127.5]).unwrap();
    let bytes = encode_ppm(&img);
    assert_eq!(bytes, b"P6\n1 1\n255\n\xff\x00\x7f");
    assert_eq!(bytes.len(), 14);

    let small = ImageBuffer::new(1, 1, vec![1.0, 2.0, 3.0]).unwrap();
    let bytes = encode_ppm(&small);
    assert_eq!(&bytes[11..], &[1, 2, 3]);
    assert_eq!(decode_ppm(&bytes).unwrap().data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn ppm_encoding_clamps_and_truncates() {
    let img = ImageBuffer::new(1, 2, vec![-4.0, 300.0, 12.9, 254.99, 0.5, 1.0]).unwrap();
    assert_eq!(&encode_ppm(&img)[11..], &[0, 255, 12, 254, 0, 1]);
}

#[test]
fn ppm_decoder_accepts_comments_and_rejects_junk() {
    let img = decode_ppm(b"P6 # made by hand\n2 1\n# depth\n255\n\x01\x02\x03\x04\x05\x06").unwrap();
    assert_eq!(img.dims(), (1, 2));
    assert_eq!(img.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert!(matches!(decode_ppm(b"P3\n1 1\n255\n1 2 3"), Err(PpmError::BadMagic(_))));
    assert!(matches!(decode_ppm(b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00"), Err(PpmError::UnsupportedDepth(65535))));
    assert!(matches!(decode_ppm(b"P6\n2 2\n255\n\x00"), Err(PpmError::ShortData { .. })));
    assert!(decode_ppm(b"P6\nx 2\n255\n").is_err());
}

#[test]
fn ppm_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_int_image(&mut rng(6), 9, 13);
    let path = dir.path().join("a.ppm");
    write_ppm(&img, &path).unwrap();
    assert_eq!(read_ppm(&path).unwrap(), img);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ppm_round_trip_on_integer_images(seed in any::<u64>(), h in 1usize..24, w in 1usize..24) {
        let mut r = rng(seed);
        let data = (0..h * w * 3).map(|_| f64::from(r.gen_range(0..=255u8))).collect();
        let img = ImageBuffer::new(h, w, data).unwrap();
        prop_assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
    }
}
