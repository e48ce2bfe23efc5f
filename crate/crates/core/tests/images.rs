//! Written images decode with an independent PNM reader.

mod common;

use common::*;
use rfscope::backproject::{backproject, SparseSeed, UnpoolMode};
use rfscope::cli::toy_network;
use rfscope::viz::{self, Normalization};
use rfscope::{Shape, Tensor};

fn quantize(v: f32) -> u8 {
    (v * 255.0 + 0.5).floor() as u8
}

#[test]
fn ppm_matches_reference_decoder() {
    let dir = tempfile::tempdir().unwrap();
    let t = random_tensor(&mut rng(5), Shape::new(3, 7, 5)).minmax_normalize();
    let path = dir.path().join("a.ppm");
    viz::write_image(&t, &path).unwrap();
    let img = image::open(&path).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (5, 7));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            assert_eq!(px[c], quantize(t.get(c, y as usize, x as usize)));
        }
    }
}

#[test]
fn pgm_matches_reference_decoder() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::from_vec(Shape::new(1, 2, 3), vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.1]).unwrap();
    let path = dir.path().join("a.pgm");
    viz::write_image(&t, &path).unwrap();
    let img = image::open(&path).unwrap().to_luma8();
    assert_eq!(img.into_raw(), vec![0, 64, 128, 191, 255, 26]);
}

#[test]
fn pattern_grid_decodes_with_padding() {
    let net = toy_network(0).unwrap();
    let tiles: Vec<_> = (0..4)
        .map(|ch| backproject(&net, &SparseSeed::new("pool2", ch), UnpoolMode::Repeat, 8).unwrap())
        .collect();
    let grid = viz::pattern_grid(&tiles, 2, 2, 2, Normalization::PerTile).unwrap();
    let bytes = viz::to_image_bytes(&grid, viz::ImageFormat::Ppm).unwrap();
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm)
        .unwrap()
        .to_rgb8();
    assert_eq!(img.dimensions(), (18, 18));
    // gap column between the two tiles holds the pad value
    for y in 0..18 {
        assert_eq!(img.get_pixel(8, y)[0], quantize(viz::PAD_VALUE));
    }
}

proptest::proptest! {
    #[test]
    fn montage_tiles_read_back_and_never_overlap(
        rows in 1usize..4, cols in 1usize..4, h in 1usize..5, w in 1usize..5, pad in 0usize..3, seed in 0u64..1000,
    ) {
        let mut r = rng(seed);
        let n = 1 + (seed as usize) % (rows * cols);
        let tiles: Vec<_> = (0..n)
            .map(|_| random_tensor(&mut r, Shape::new(2, h, w)).minmax_normalize().scale(0.25))
            .collect();
        let m = viz::Montage::new(tiles.clone(), rows, cols, pad);
        let out = m.render().unwrap();
        let mut owner = vec![0usize; out.shape().len()];
        for (k, tile) in tiles.iter().enumerate() {
            let (y0, x0) = m.offset(k / cols, k % cols, tile.shape());
            for c in 0..2 {
                for i in 0..h {
                    for j in 0..w {
                        proptest::prop_assert_eq!(out.get(c, y0 + i, x0 + j), tile.get(c, i, j));
                        owner[out.shape().plane() * c + (y0 + i) * out.width() + x0 + j] += 1;
                    }
                }
            }
        }
        for (v, o) in out.data().iter().zip(&owner) {
            proptest::prop_assert!(*o <= 1);
            if *o == 0 {
                proptest::prop_assert_eq!(*v, viz::PAD_VALUE);
            }
        }
    }
}
