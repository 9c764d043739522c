//! Regenerates the canonical fixtures:
//! `cargo test -p treehedge-cli --test gen_fixtures -- --ignored`

use std::path::Path;
use treehedge_cli::instance::{
    canonical_json, ClaimDto, GeneratorDto, InstanceDto, LossDto, MeasureDto, TreeDto,
};

fn write(name: &str, dto: &InstanceDto) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join(name), canonical_json(dto)).unwrap();
}

fn tree(factors: Vec<f64>, steps: usize) -> TreeDto {
    TreeDto {
        generator: Some(GeneratorDto { initial_price: 100.0, factors, steps }),
        nodes: None,
    }
}

#[test]
#[ignore]
fn regenerate_fixtures() {
    write(
        "trinomial-call-cvar09.json",
        &InstanceDto {
            format: 1,
            tree: tree(vec![1.2, 1.0, 0.8], 1),
            measures: vec![MeasureDto {
                transitions: vec![vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]],
            }],
            claim: ClaimDto::Call { strike: 100.0, asset: None },
            loss: LossDto::Cvar { alpha: 0.9 },
            floor_c: None,
            position: None,
            q_measure: None,
            tolerances: None,
        },
    );
    write(
        "strict-cone-trinomial.json",
        &InstanceDto {
            format: 1,
            tree: tree(vec![1.2, 1.0, 0.8], 1),
            measures: vec![MeasureDto {
                transitions: vec![vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]],
            }],
            claim: ClaimDto::Call { strike: 100.0, asset: None },
            loss: LossDto::StrictCone,
            floor_c: None,
            position: None,
            q_measure: None,
            tolerances: None,
        },
    );
    write(
        "constant-claim.json",
        &InstanceDto {
            format: 1,
            tree: tree(vec![1.2, 0.8], 1),
            measures: vec![MeasureDto { transitions: vec![vec![0.5, 0.5]] }],
            claim: ClaimDto::Explicit { payoffs: vec![3.0, 3.0] },
            loss: LossDto::Cvar { alpha: 0.5 },
            floor_c: None,
            position: None,
            q_measure: None,
            tolerances: None,
        },
    );
    write(
        "nonviable-binomial-cvar08.json",
        &InstanceDto {
            format: 1,
            tree: tree(vec![1.2, 0.8], 1),
            measures: vec![MeasureDto { transitions: vec![vec![0.9, 0.1]] }],
            claim: ClaimDto::Call { strike: 100.0, asset: None },
            loss: LossDto::Cvar { alpha: 0.8 },
            floor_c: None,
            position: None,
            q_measure: None,
            tolerances: None,
        },
    );
    write(
        "risk-uniform-cvar05.json",
        &InstanceDto {
            format: 1,
            tree: tree(vec![1.2, 1.1, 0.9, 0.8], 1),
            measures: vec![MeasureDto {
                transitions: vec![vec![0.25, 0.25, 0.25, 0.25]],
            }],
            claim: ClaimDto::Explicit { payoffs: vec![1.0, 2.0, 3.0, 4.0] },
            loss: LossDto::Cvar { alpha: 0.5 },
            floor_c: None,
            position: Some(vec![1.0, 2.0, 3.0, 4.0]),
            q_measure: Some(MeasureDto { transitions: vec![vec![0.25, 0.25, 0.25, 0.25]] }),
            tolerances: None,
        },
    );
    write(
        "measure-arity-mismatch.json",
        &InstanceDto {
            format: 1,
            tree: tree(vec![1.2, 0.8], 1),
            measures: vec![MeasureDto { transitions: vec![vec![0.5, 0.3, 0.2]] }],
            claim: ClaimDto::Call { strike: 100.0, asset: None },
            loss: LossDto::Cvar { alpha: 0.5 },
            floor_c: None,
            position: None,
            q_measure: None,
            tolerances: None,
        },
    );
}
