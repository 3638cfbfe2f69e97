use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use densescan::detector::{DetectConfig, Detector};
use densescan::image::Image;
use densescan::nnet::mininet;
use densescan::pyramid::PyramidConfig;
use densescan::{Shape, Tensor};

fn noise_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(1, h, w, |_, _, _| rng.gen_range(0.0f32..255.0))
}

#[test]
fn heat_map_cells_equal_window_forward() {
    let net = mininet::mininet(3);
    let cfg = DetectConfig { pyramid: PyramidConfig { upscale: 2.0, ..Default::default() }, ..Default::default() };
    let det = Detector::new(&net, cfg).unwrap();
    let img = noise_image(131, 131, 11);
    let levels = det.pyramid(&img).unwrap();
    let maps = det.heatmaps(&img).unwrap();
    assert_eq!(levels.len(), 9);
    assert_eq!(maps.len(), 9);
    let mut worst = 0f64;
    for (level, map) in levels.iter().zip(&maps) {
        let t = level.image.to_tensor();
        assert_eq!(map.rows, (t.height() - 35) / 4 + 1);
        assert_eq!(map.cols, (t.width() - 35) / 4 + 1);
        for r in 0..map.rows {
            for c in 0..map.cols {
                let out = net.forward(&t.crop(4 * c, 4 * r, 35, 35).unwrap()).unwrap();
                worst = worst.max((out.at(1, 0, 0) as f64 - map.score(r, c) as f64).abs());
            }
        }
    }
    assert!(worst <= 1e-5, "max abs diff {worst}");
}

#[test]
fn output_grid_for_67_pixel_input() {
    let conv = mininet::mininet(5).fc_to_conv().unwrap();
    let out = conv.forward(&Tensor::filled(Shape::new(1, 67, 67), 90.0)).unwrap();
    assert_eq!(out.shape(), Shape::new(2, 9, 9));
}

#[test]
fn fc_to_conv_reproduces_window_output() {
    let net = mininet::mininet(9);
    let conv = net.fc_to_conv().unwrap();
    assert_eq!(conv.param_count(), net.param_count());
    assert!(conv.is_fully_convolutional());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let x = Tensor::from_fn(Shape::new(1, 35, 35), |_, _, _| rng.gen_range(0.0..255.0));
        let a = net.forward(&x).unwrap();
        let b = conv.forward(&x).unwrap();
        assert_eq!(b.shape(), Shape::new(2, 1, 1));
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() <= 1e-6, "{u} vs {v}");
        }
    }
}

#[test]
fn threaded_detection_matches_single_threaded() {
    let net = mininet::mininet(2);
    let img = noise_image(90, 120, 8);
    let single = Detector::new(&net, DetectConfig::default()).unwrap().detect(&img).unwrap();
    let cfg = DetectConfig { threads: 4, ..Default::default() };
    let multi = Detector::new(&net, cfg).unwrap().detect(&img).unwrap();
    assert_eq!(single, multi);
}
