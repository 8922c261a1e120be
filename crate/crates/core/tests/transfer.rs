use hqgan::data::{synthetic_shapes_dataset, ShapeClass};
use hqgan::discriminator::*;
use hqgan::generator::*;
use hqgan::nn::{self, Mode, Role};
use hqgan::rng;
use hqgan::tensor::{no_grad, AdamConfig};
use hqgan::trainer::{train_step, Gan};
use hqgan::transfer::*;
use hqgan::{Error, Tensor};
use sha2::{Digest, Sha256};

fn tiny_backbone() -> BackboneConfig {
    BackboneConfig::reduced([4, 4, 8, 8, 8], 8)
}

fn probe_images() -> Tensor {
    Tensor::uniform(&[4, 3, 8, 8], -1.0, 1.0, &mut rng::seeded(77, 0))
}

#[test]
fn save_load_save_is_byte_identical() {
    let b = Backbone::new(tiny_backbone(), &mut rng::seeded(1, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.hqws"), dir.path().join("b.hqws"));
    save_weights(&b.to_weight_store(), &p1).unwrap();
    let loaded = load_weights(&p1).unwrap();
    save_weights(&loaded, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(loaded, b.to_weight_store());
}

#[test]
fn every_single_bit_flip_in_a_region_is_rejected() {
    let b = Backbone::new(tiny_backbone(), &mut rng::seeded(2, 0)).unwrap();
    let bytes = b.to_weight_store().to_bytes();
    for pos in [4, 9, 40, bytes.len() / 2, bytes.len() - 40, bytes.len() - 1] {
        for bit in 0..8 {
            let mut bad = bytes.clone();
            bad[pos] ^= 1 << bit;
            assert!(WeightStore::from_bytes(&bad).is_err(), "flip at {pos}:{bit} accepted");
        }
    }
    assert!(matches!(WeightStore::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Checksum)));
}

/// Encodes records following the documented layout without going through
/// `WeightStore::to_bytes`.
fn foreign_file(records: &[(String, Vec<usize>, Vec<f64>)]) -> Vec<u8> {
    let mut out = b"HQWS".to_vec();
    out.extend(1u32.to_le_bytes());
    out.extend((records.len() as u32).to_le_bytes());
    for (name, shape, values) in records {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.bytes());
        out.extend((shape.len() as u32).to_le_bytes());
        shape.iter().for_each(|&d| out.extend((d as u64).to_le_bytes()));
        values.iter().for_each(|v| out.extend(v.to_le_bytes()));
    }
    let digest = Sha256::digest(&out);
    out.extend(digest);
    out
}

#[test]
fn externally_written_file_loads_into_discriminator_backbone() {
    let mut r = rng::seeded(3, 0);
    let d = Discriminator::new(
        Backbone::new(tiny_backbone(), &mut r).unwrap(),
        HeadConfig { kind: HeadKind::Hybrid, n_qubits: 5 },
        &mut r,
    )
    .unwrap();
    let layout: Vec<(String, Vec<usize>)> = nn::named_tensors(&d.backbone)
        .into_iter()
        .map(|(n, t, _)| (n, t.shape().to_vec()))
        .collect();
    let records: Vec<_> = layout
        .iter()
        .enumerate()
        .map(|(k, (name, shape))| {
            let n: usize = shape.iter().product();
            let values = (0..n).map(|i| 0.5 + (k * 1000 + i) as f64 * 1e-4).collect();
            (name.clone(), shape.clone(), values)
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("foreign.hqws");
    std::fs::write(&path, foreign_file(&records)).unwrap();

    d.backbone.load_weights(&load_weights(&path).unwrap()).unwrap();
    for ((name, t, _), (_, _, want)) in nn::named_tensors(&d.backbone).iter().zip(&records) {
        assert_eq!(&t.to_vec(), want, "{name}");
    }
    // the head is untouched and the full module still runs
    let y = no_grad(|| d.forward(&probe_images(), Mode::Eval)).unwrap();
    assert_eq!(y.shape(), &[4, 1]);
}

#[test]
fn mismatched_shape_names_the_layer() {
    let small = Backbone::new(tiny_backbone(), &mut rng::seeded(4, 0)).unwrap();
    let wide = Backbone::new(BackboneConfig::reduced([4, 4, 8, 8, 16], 8), &mut rng::seeded(4, 0)).unwrap();
    let err = wide.load_weights(&small.to_weight_store()).unwrap_err();
    assert!(matches!(err, Error::WeightMismatch { .. }), "{err}");
    assert!(err.to_string().contains("layer4"), "{err}");
}

#[test]
fn pretraining_separates_discs_from_squares_and_reloads_exactly() {
    let config = BackboneConfig::reduced([4, 4, 8, 16, 32], 16);
    let ds = synthetic_shapes_dataset(128, 16, &[ShapeClass::Disc, ShapeClass::Square], 11).unwrap();
    let (model, report) = pretrain_classifier(&ds, 2, 8, &PretrainConfig::new(config.clone(), 5)).unwrap();
    assert_eq!(report.epoch_losses.len(), 8);
    assert!(report.final_accuracy > 0.95, "accuracy {}", report.final_accuracy);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("backbone.hqws");
    save_weights(&model.backbone.to_weight_store(), &path).unwrap();
    let restored = build_backbone(config, Some(&load_weights(&path).unwrap()), &mut rng::seeded(99, 0)).unwrap();
    let x = Tensor::uniform(&[4, 3, 16, 16], -1.0, 1.0, &mut rng::seeded(77, 0));
    let a = no_grad(|| model.backbone.forward(&x, Mode::Eval)).unwrap().to_vec();
    let b = no_grad(|| restored.forward(&x, Mode::Eval)).unwrap().to_vec();
    let worst = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-10, "{worst}");
}

fn gan_with(backbone: Backbone, seed: u64) -> Gan<Generator, Discriminator> {
    let g = Generator::new(
        GeneratorConfig { base_channels: 8, output_size: 8, ..Default::default() },
        &mut rng::seeded(seed, rng::stream::GENERATOR_INIT),
    )
    .unwrap();
    let d = Discriminator::new(
        backbone,
        HeadConfig { kind: HeadKind::Classical, n_qubits: 5 },
        &mut rng::seeded(seed, rng::stream::DISCRIMINATOR_INIT),
    )
    .unwrap();
    Gan::new(g, d, AdamConfig::default(), LatentDistribution::Uniform).unwrap()
}

fn pretrained_store() -> WeightStore {
    let ds = synthetic_shapes_dataset(16, 8, &[ShapeClass::Disc, ShapeClass::Bar], 12).unwrap();
    pretrain_backbone(&ds, 2, 1, &PretrainConfig::new(tiny_backbone(), 6)).unwrap().0
}

#[test]
fn pretrained_and_random_trajectories_differ() {
    let real = synthetic_shapes_dataset(8, 8, &[ShapeClass::Disc], 13).unwrap().to_batch().images;
    let store = pretrained_store();
    let run = |pretrained: bool| {
        let b = build_backbone(
            tiny_backbone(),
            pretrained.then_some(&store),
            &mut rng::seeded(7, rng::stream::DISCRIMINATOR_INIT),
        )
        .unwrap();
        let mut gan = gan_with(b, 7);
        let mut z = rng::seeded(7, rng::stream::LATENT);
        (0..3)
            .map(|_| {
                let l = train_step(&mut gan, &real, &mut z).unwrap();
                (l.d_loss, l.g_loss)
            })
            .collect::<Vec<_>>()
    };
    let (p, q) = (run(true), run(true));
    assert_eq!(p, q);
    assert_ne!(p, run(false));
}

#[test]
fn every_loaded_layer_moves_after_one_step() {
    let store = pretrained_store();
    let b = build_backbone(tiny_backbone(), Some(&store), &mut rng::seeded(8, 0)).unwrap();
    let mut gan = gan_with(b, 8);
    let real = synthetic_shapes_dataset(8, 8, &[ShapeClass::Square], 14).unwrap().to_batch().images;
    let l = train_step(&mut gan, &real, &mut rng::seeded(8, rng::stream::LATENT)).unwrap();
    assert!(l.d_loss > 0.0);
    let mut checked = 0;
    for (name, t, role) in nn::named_tensors(&gan.discriminator.backbone) {
        if role != Role::Parameter {
            continue;
        }
        let before = &store.get(&name).unwrap().values;
        assert_ne!(&t.to_vec(), before, "{name} unchanged");
        checked += 1;
    }
    assert_eq!(checked, nn::parameters(&gan.discriminator.backbone).len());
}
