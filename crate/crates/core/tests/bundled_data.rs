mod common;

use kerngen::analysis::MachineModel;
use kerngen::bench::load_suite;
use kerngen::netops::{infer_shapes, parse_op_list, ConvSpec};
use kerngen::planner::{plan_conv, select_variant, Tuning, Variant};

#[test]
fn alexnet_conv1_is_transcribed() {
    let text = std::fs::read_to_string(common::data("nets/alexnet.ops")).unwrap();
    let ops = parse_op_list(&text, "alexnet.ops").unwrap();
    let conv1 = ops.iter().find(|o| o.name == "conv1").unwrap();
    assert_eq!(conv1.spec, ConvSpec::image(227, 227, 3, 96, 11, 4, 0).unwrap().with_bias(true).with_relu(true));
    assert_eq!(infer_shapes(&conv1.spec).unwrap().out_dims.to_string(), "Y:X:C=55:55:96");
}

#[test]
fn net_layers_chain_spatially() {
    // each net's layers must consume sizes its predecessors can produce
    for net in ["alexnet", "nin", "googlenet"] {
        let text = std::fs::read_to_string(common::data(&format!("nets/{net}.ops"))).unwrap();
        for op in parse_op_list(&text, net).unwrap() {
            let out = infer_shapes(&op.spec).unwrap().out_dims;
            assert!(out.len() > 0, "{net}.{}", op.name);
            assert!(op.spec.has_bias && op.spec.fuse_relu, "{net}.{} must mark bias and relu", op.name);
        }
    }
}

#[test]
fn three_net_suite_counts() {
    let suite = load_suite(common::data("suites/three_nets.suite")).unwrap();
    assert_eq!(suite.batch_sizes, [1, 5, 20]);
    assert_eq!(suite.instances(), 3 * (5 + 12 + 57));
    assert_eq!(suite.len(), 183);
}

#[test]
fn pointwise_ops_select_k1_variants_on_both_machines() {
    let suite = load_suite(common::data("suites/three_nets.suite")).unwrap();
    for m in [MachineModel::generic_gpu(), MachineModel::mobile_simd()] {
        let mut fallback = 0;
        for e in suite.entries() {
            let v = select_variant(&e.spec, &m);
            if e.spec.kernel_size == 1 {
                assert!(v.is_k1(), "{} -> {v}", e.name);
            }
            fallback += matches!(v, Variant::Conv | Variant::ConvSimd) as usize;
            assert_eq!(v, select_variant(&e.spec, &m));
        }
        assert!((fallback as f64) < 0.25 * suite.len() as f64);
    }
}

#[test]
fn every_full_size_op_plans() {
    let suite = load_suite(common::data("suites/three_nets.suite")).unwrap();
    for m in [MachineModel::generic_gpu(), MachineModel::mobile_simd()] {
        for e in suite.entries() {
            let plan = plan_conv(&e.spec, &m, None).unwrap();
            assert!(plan.blocking.violations(&plan.gemm_view, &m, plan.use_local_mem).is_empty());
        }
    }
}

#[test]
fn machine_files_match_builtins() {
    for (file, builtin) in [("generic_gpu", MachineModel::generic_gpu()), ("mobile_simd", MachineModel::mobile_simd())] {
        let loaded = MachineModel::load(common::data(&format!("machines/{file}.json"))).unwrap();
        assert_eq!(loaded, builtin);
        assert_eq!(MachineModel::builtin(file), Some(builtin));
    }
    assert!(MachineModel::builtin("tpu").is_none());
}

#[test]
fn example_tuning_file_parses() {
    let t = Tuning::load(common::data("tuning.json")).unwrap();
    assert_eq!(t.get("t3").unwrap().variant, Some(Variant::Conv));
    assert_eq!(t.get("k1").unwrap().blocking.kb, Some(4));
}
