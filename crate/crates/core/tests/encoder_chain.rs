//! Error compounding across stacked integer layers.

use intformer_core::encoder::{
    synth, EncoderDims, EncoderWeights, IntEncoderLayer, ReferenceLayer,
};
use intformer_core::quant::dequantize;

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Two stacked layers: the second is calibrated on the first's reference
/// outputs and consumes the first's output edge directly. Stacking must not
/// more than double the single-layer error.
#[test]
fn stacking_two_layers_less_than_doubles_the_error() {
    let dims = EncoderDims::new(8, 32, 2, 64).unwrap();
    let fw1 = synth::random_weights(&dims, 101);
    let fw2 = synth::random_weights(&dims, 202);
    let calib = synth::random_inputs(&dims, 64, 303);
    let held_out = synth::random_inputs(&dims, 8, 404);

    let qw1 = EncoderWeights::quantize(&fw1, &calib).unwrap();
    let ref1 = ReferenceLayer::from_quantized(&qw1);

    // calibrate layer 2 on layer 1's reference outputs, pinned to its edge
    let calib2: Vec<Vec<f64>> = calib.iter().map(|x| ref1.forward(x).unwrap()).collect();
    let out1_params = qw1.acts.out;
    let qw2 = EncoderWeights::quantize_chained(&fw2, &calib2, out1_params).unwrap();
    let ref2 = ReferenceLayer::from_quantized(&qw2);

    let layer1 = IntEncoderLayer::new(qw1).unwrap();
    let layer2 = IntEncoderLayer::new(qw2).unwrap();

    let mut single = 0.0f64;
    let mut stacked = 0.0f64;
    for x in &held_out {
        let xq = layer1.quantize_input(x).unwrap();
        let x_deq = dequantize(&xq);

        let mid_int = layer1.forward(&xq).unwrap();
        let mid_ref = ref1.forward(&x_deq).unwrap();
        single += rel_l2(&dequantize(&mid_int), &mid_ref);

        let out_int = layer2.forward(&mid_int).unwrap();
        let out_ref = ref2.forward(&mid_ref).unwrap();
        stacked += rel_l2(&dequantize(&out_int), &out_ref);
    }
    single /= held_out.len() as f64;
    stacked /= held_out.len() as f64;
    println!("mean relative L2: single layer {single:.5}, stacked {stacked:.5}");
    assert!(single < 5e-2, "single-layer error {single}");
    assert!(
        stacked < 2.0 * single,
        "stacking degraded error more than 2x: {stacked} vs {single}"
    );
}
