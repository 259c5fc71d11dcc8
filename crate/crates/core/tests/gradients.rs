mod common;

use candle_core::{DType, Var};
use common::{grad_check, readout, store_vars, uniform_tensor, GradCheck};
use robustcm::backends::{ConformerBlock, ConformerConfig, Lcnn, LcnnConfig, ResidualUnit};
use robustcm::dumenet::{masked_mse_loss, DualBatch, Dumenet, DumenetConfig};
use robustcm::backends::mfm;
use robustcm::nn::{max_pool2, Conv2d, ConvTranspose2d, ParamStore};

const TOL: f64 = 1e-3;

fn assert_mostly_exact(name: &str, g: &GradCheck) {
    assert!(g.pass_rate() >= 0.95, "{name}: {g:?}");
}

#[test]
fn mini_dumenet_gradients() {
    let store = ParamStore::new(11, DType::F64);
    let cfg = DumenetConfig { encoder_channels: vec![2, 4], n_mels: 8, ..DumenetConfig::default() };
    let net = Dumenet::new(&store.root(), &cfg).unwrap();
    let noisy = uniform_tensor(&[1, 4, 8], -1.0, 1.0, DType::F64, 1);
    let clean = uniform_tensor(&[1, 4, 8], -1.0, 1.0, DType::F64, 2);
    let batch = DualBatch::new(&noisy, &clean, &[1]).unwrap();
    let loss = || masked_mse_loss(&batch, &net.forward(&batch.inputs, true).unwrap()).unwrap();
    let g = grad_check(&store_vars(&store), &loss, 150, 1e-6, TOL, 3);
    assert_mostly_exact("dumenet", &g);
}

#[test]
fn conformer_block_gradients_wrt_params_and_input() {
    let store = ParamStore::new(12, DType::F64);
    let cfg = ConformerConfig { model_dim: 8, ffn_dim: 16, n_heads: 2, conv_kernel: 3, ..ConformerConfig::default() };
    let block = ConformerBlock::new(&store.root(), &cfg).unwrap();
    let x = Var::from_tensor(&uniform_tensor(&[1, 4, 8], -1.0, 1.0, DType::F64, 4)).unwrap();
    let loss = || readout(&block.forward(x.as_tensor(), true).unwrap(), 5);
    let mut vars = store_vars(&store);
    let g = grad_check(&vars, &loss, 150, 1e-6, TOL, 6);
    assert_mostly_exact("conformer params", &g);
    vars.clear();
    vars.push(("input".into(), x.clone()));
    let g = grad_check(&vars, &loss, 32, 1e-6, TOL, 7);
    assert_mostly_exact("conformer input", &g);
}

#[test]
fn lcnn_stem_gradients() {
    let store = ParamStore::new(13, DType::F64);
    let cfg = LcnnConfig { n_mels: 32, ..LcnnConfig::default() };
    let lcnn = Lcnn::new(&store.root(), &cfg).unwrap();
    let x = uniform_tensor(&[2, 64, 32], -1.0, 1.0, DType::F64, 8);
    let loss = || readout(&lcnn.stem(&x, true).unwrap(), 9);
    let vars: Vec<_> = store_vars(&store).into_iter().filter(|(n, _)| n.starts_with("conv") || n.starts_with("bn")).collect();
    let g = grad_check(&vars, &loss, 150, 1e-6, TOL, 10);
    assert_mostly_exact("lcnn stem", &g);
}

#[test]
fn resnet_unit_gradients() {
    let store = ParamStore::new(14, DType::F64);
    let unit = ResidualUnit::new(&store.root(), 4, 8, 2, Some(2)).unwrap();
    let x = uniform_tensor(&[2, 4, 6, 6], -1.0, 1.0, DType::F64, 11);
    let loss = || readout(&unit.forward(&x, true).unwrap(), 12);
    let g = grad_check(&store_vars(&store), &loss, 150, 1e-6, TOL, 13);
    assert_mostly_exact("resnet unit", &g);
}

#[test]
fn pooling_and_mfm_route_full_gradient() {
    let x = Var::from_tensor(&uniform_tensor(&[2, 4, 7, 6], -1.0, 1.0, DType::F64, 21)).unwrap();
    let vars = vec![("x".to_string(), x.clone())];
    let g = grad_check(&vars, &|| readout(&max_pool2(x.as_tensor()).unwrap(), 22), 80, 1e-6, TOL, 23);
    assert_mostly_exact("max pool", &g);
    let g = grad_check(&vars, &|| readout(&mfm(x.as_tensor()).unwrap(), 22), 80, 1e-6, TOL, 23);
    assert_mostly_exact("mfm", &g);
}

#[test]
fn strided_conv_and_deconv_weight_gradients() {
    let x = Var::from_tensor(&uniform_tensor(&[2, 3, 7, 8], -1.0, 1.0, DType::F64, 31)).unwrap();
    for (k, stride, pad) in [(1usize, 1usize, 0usize), (3, 2, 1), (5, 1, 2)] {
        let store = ParamStore::new(32, DType::F64);
        let conv = Conv2d::new(&store.root(), 3, 5, k, stride, pad, true).unwrap();
        let mut vars = store_vars(&store);
        vars.push(("x".into(), x.clone()));
        let g = grad_check(&vars, &|| readout(&conv.forward(x.as_tensor()).unwrap(), 33), 80, 1e-6, TOL, 34);
        assert_mostly_exact(&format!("conv k{k} s{stride}"), &g);
    }
    let store = ParamStore::new(35, DType::F64);
    let deconv = ConvTranspose2d::new(&store.root(), 3, 4, 3, 2, 1, 1, true).unwrap();
    let mut vars = store_vars(&store);
    vars.push(("x".into(), x.clone()));
    let g = grad_check(&vars, &|| readout(&deconv.forward(x.as_tensor()).unwrap(), 36), 80, 1e-6, TOL, 37);
    assert_mostly_exact("deconv", &g);
}
