//! Benchmark workloads shared by the criterion benches.

use swapgraph_core::{generate, CompGraph, Topology};

/// Named generated graphs, smallest first.
pub fn workloads() -> Vec<(&'static str, CompGraph)> {
    [
        ("chain100", Topology::Chain { n: 100 }),
        ("resnet16", Topology::ResnetLike { blocks: 16 }),
        (
            "unet4x2",
            Topology::Unet {
                depth: 4,
                convs_per_level: 2,
            },
        ),
        ("resnet53", Topology::ResnetLike { blocks: 53 }),
    ]
    .into_iter()
    .map(|(name, t)| {
        (
            name,
            generate(t, 1 << 20).expect("workload parameters are positive"),
        )
    })
    .collect()
}
