//! Criterion benchmarks for the FEM solvers and the network; see `benches/`.
//! Shared fixtures live here so both bench targets build them the same way.

use pidn_core::fem_darcy::{solve_darcy, DarcySolution};
use pidn_core::{generate_mesh, GaussianComponent, PhysParams, SizeFieldParams, SourceMixture, TriMesh};

/// Single centered source of width 0.45 with its adaptive mesh and flow.
pub struct Fixture {
    pub params: PhysParams,
    pub source: SourceMixture,
    pub mesh: TriMesh,
    pub darcy: DarcySolution,
}

pub fn centered_fixture(final_time: f64) -> Fixture {
    let params = PhysParams {
        final_time,
        ..PhysParams::default()
    };
    let source = SourceMixture::new(vec![GaussianComponent::new([5.0, 5.0], 0.45)], &params).expect("valid source");
    let mesh = generate_mesh(&source, &SizeFieldParams::default(), &params).expect("mesh");
    let darcy = solve_darcy(&mesh, &params, &source).expect("darcy");
    Fixture {
        params,
        source,
        mesh,
        darcy,
    }
}
