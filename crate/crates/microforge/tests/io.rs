use microforge::io::{self, IoError};
use microforge_core::tensor::Tensor;
use microforge_core::train::Checkpoint;
use microforge_core::{BinaryMask, GrayImage, PatchSet};

fn ramp(w: usize, h: usize) -> GrayImage {
    GrayImage::from_fn(w, h, |r, c| ((r * 31 + c * 7) % 256) as u8).unwrap()
}

#[test]
fn png_and_pgm_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let img = ramp(13, 7);
    for name in ["a.png", "b.pgm", "c.PGM"] {
        let p = dir.path().join(name);
        io::write_image(&p, &img).unwrap();
        assert_eq!(io::read_image(&p).unwrap(), img, "{name}");
    }
    let listed: Vec<String> =
        io::list_images(dir.path()).unwrap().iter().map(|p| p.file_name().unwrap().to_string_lossy().into()).collect();
    assert_eq!(listed, ["a.png", "b.pgm", "c.PGM"]);
}

#[test]
fn colour_png_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("rgb.png");
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, 2, 2);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(&[0; 12]).unwrap();
    }
    std::fs::write(&p, bytes).unwrap();
    assert!(matches!(io::read_image(&p), Err(IoError::Unsupported { .. })));
    std::fs::write(&p, b"not a png").unwrap();
    assert!(matches!(io::read_image(&p), Err(IoError::Malformed { .. })));
    assert!(matches!(io::read_image(&dir.path().join("missing.png")), Err(IoError::Fs { .. })));
}

#[test]
fn masks_must_be_binary() {
    let dir = tempfile::tempdir().unwrap();
    let mask = BinaryMask::from_fn(5, 4, |r, c| (r + c) % 3 == 0).unwrap();
    let p = dir.path().join("m.png");
    io::write_mask(&p, &mask).unwrap();
    assert_eq!(io::read_mask(&p).unwrap(), mask);
    io::write_image(&p, &ramp(4, 4)).unwrap();
    assert!(matches!(io::read_mask(&p), Err(IoError::Unsupported { .. })));
}

#[test]
fn patch_sets_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let set = PatchSet::from_raw(3, 2, 42, (0..18).collect()).unwrap();
    let p = dir.path().join("p.mgpt");
    io::write_patches(&p, &set).unwrap();
    assert_eq!(io::read_patches(&p).unwrap(), set);
    let mut bytes = std::fs::read(&p).unwrap();
    bytes.pop();
    std::fs::write(&p, &bytes).unwrap();
    assert!(matches!(io::read_patches(&p), Err(IoError::Malformed { .. })));
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = Checkpoint {
        version: microforge_core::train::CHECKPOINT_VERSION,
        iteration: 7,
        phase: 16,
        alpha: 0.25,
        rng_state: [9; 16],
        entries: vec![
            ("g.map.0.w".into(), Tensor::new(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, f32::MIN_POSITIVE, 6.0]).unwrap()),
            ("adam.g.t".into(), Tensor::scalar(7.0)),
        ],
    };
    let p = dir.path().join("sub/c.mgck");
    io::write_checkpoint(&p, &ckpt).unwrap();
    assert_eq!(io::read_checkpoint(&p).unwrap(), ckpt);
    std::fs::write(&p, b"MGCK").unwrap();
    assert!(matches!(io::read_checkpoint(&p), Err(IoError::Checkpoint { .. })));
}

#[test]
fn atomic_writes_leave_no_temporaries() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.txt");
    io::write_atomic(&p, b"one").unwrap();
    io::write_atomic(&p, b"two").unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), b"two");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}
