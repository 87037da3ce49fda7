use std::collections::BTreeMap;

use proptest::prelude::*;

use kerngen::analysis::MachineModel;
use kerngen::codegen::{gen_pipeline, gen_sgemm};
use kerngen::executor::{run, run_pipeline, EmuConfig};
use kerngen::nda::{Dims, Nda};
use kerngen::netops::{infer_shapes, ConvSpec};
use kerngen::planner::{plan_conv, plan_sgemm, BlockingOverrides, GemmView, OpTuning, Variant};
use kerngen::twin::{conv_inputs, conv_twin};

fn arb_variant() -> impl Strategy<Value = (Variant, MachineModel)> {
    prop::sample::select(Variant::CONV_VARIANTS.to_vec()).prop_map(|v| {
        let m = if v.is_simd() { MachineModel::mobile_simd() } else { MachineModel::generic_gpu() };
        (v, m)
    })
}

prop_compose! {
    fn arb_case()((v, m) in arb_variant(), y in 1usize..=14, x in 1usize..=14, c in 1usize..=9,
                  oc in 1usize..=12, k in 2usize..=5, st in 1usize..=3, same in any::<bool>(),
                  b in 1usize..=2, bias in any::<bool>(), relu in any::<bool>())
        -> (Variant, MachineModel, ConvSpec)
    {
        let k = if v.is_k1() { 1 } else { k };
        let pad = if same && !v.is_k1() { k / 2 } else { 0 };
        let s = ConvSpec::image(y.max(k), x.max(k), c, oc, k, st, pad).unwrap()
            .with_batch(b).unwrap().with_bias(bias).with_relu(relu);
        (v, m, s)
    }
}

fn plan_for(v: Variant, m: &MachineModel, s: &ConvSpec) -> kerngen::planner::VariantPlan {
    let tune = OpTuning {
        variant: Some(v),
        ..Default::default()
    };
    plan_conv(s, m, Some(&tune)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn random_ops_match_the_oracle((v, m, s) in arb_case(), seed in any::<u64>()) {
        let plan = plan_for(v, &m, &s);
        let r = conv_twin(&plan, &s, seed, &EmuConfig::default()).unwrap();
        prop_assert!(r.passed(), "{} {:?}: {}", v, s, r.max_rel_err);
    }

    #[test]
    fn fma_and_store_counters_are_exact((v, m, s) in arb_case()) {
        let plan = plan_for(v, &m, &s);
        let r = conv_twin(&plan, &s, 1, &EmuConfig::default()).unwrap();
        let c = r.compute();
        let useful = infer_shapes(&s).unwrap().flops / 2;
        prop_assert_eq!(c.fma_count, plan.executed_fmas());
        prop_assert!(c.fma_count >= useful);
        prop_assert_eq!(c.flops(), 2 * c.fma_count);
        prop_assert_eq!(c.global_stores_bytes, 4 * s.out_dims().len() as u64);
    }

    #[test]
    fn workgroup_order_never_changes_results((v, m, s) in arb_case(), shuffle in any::<u64>(), par in 1usize..=4) {
        let plan = plan_for(v, &m, &s);
        let stages = gen_pipeline(&plan, &s).unwrap();
        let inputs = conv_inputs(&s, 3);
        let (base, base_counters) = run_pipeline(&stages, &inputs, &EmuConfig::default()).unwrap();
        let cfg = EmuConfig { workgroup_parallelism: par, shuffle_seed: Some(shuffle), ..EmuConfig::default() };
        let (other, counters) = run_pipeline(&stages, &inputs, &cfg).unwrap();
        prop_assert_eq!(base, other);
        prop_assert_eq!(base_counters, counters);
    }
}

#[test]
fn divisible_problems_do_no_wasted_work() {
    let s = ConvSpec::image(16, 16, 8, 16, 3, 1, 1).unwrap();
    let ov = BlockingOverrides {
        mt: Some(4),
        nt: Some(4),
        kb: Some(8),
        mb: Some(16),
        nb: Some(4),
    };
    let tune = OpTuning {
        variant: Some(Variant::Conv),
        blocking: ov,
    };
    let plan = plan_conv(&s, &MachineModel::generic_gpu(), Some(&tune)).unwrap();
    let r = conv_twin(&plan, &s, 0, &EmuConfig::default()).unwrap();
    assert_eq!(r.compute().fma_count, 16 * 16 * 16 * 9 * 8);
}

#[test]
fn off_block_sgemm_never_touches_memory_out_of_bounds() {
    let ov = BlockingOverrides {
        mt: Some(8),
        nt: Some(8),
        kb: Some(8),
        mb: Some(8),
        nb: Some(8),
    };
    for (m, n, k) in [(65, 64, 64), (64, 65, 63), (1, 129, 7)] {
        let plan = plan_sgemm(GemmView::new(m, n, k), &MachineModel::generic_gpu(), &ov).unwrap();
        let art = gen_sgemm(&plan).unwrap();
        let a = Nda::random_dyadic(Dims::new([("M", m as usize), ("K", k as usize)]).unwrap(), 1);
        let bt = Nda::random_dyadic(Dims::new([("N", n as usize), ("K", k as usize)]).unwrap(), 2);
        let inputs: BTreeMap<String, Nda> = [("a".to_string(), a), ("bt".to_string(), bt)].into();
        let (_, c) = run(&art, &inputs, &EmuConfig::default()).unwrap();
        assert_eq!(c.global_stores_bytes, 4 * m * n);
    }
}
