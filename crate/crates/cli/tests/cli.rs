//! End-to-end checks of the command-line interface and its exit-code
//! contract (0 ok, 1 usage/parse, 2 coherence-check failed).

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Output};

use tempfile::TempDir;

const TAXONOMY: &str = "child,parent\nLungOpacity,ROOT\nEdema,LungOpacity\nInfiltration,LungOpacity\n";

fn write_file(dir: &TempDir, name: &str, content: &str) -> PathBuf {
    let path = dir.path().join(name);
    let mut f = std::fs::File::create(&path).unwrap();
    f.write_all(content.as_bytes()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taxdefer"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn audit_coherent_file_exits_zero() {
    let dir = TempDir::new().unwrap();
    let tax = write_file(&dir, "tax.csv", TAXONOMY);
    let actions = write_file(
        &dir,
        "actions.csv",
        "instance_id,node,action\nx,LungOpacity,1\nx,Edema,1\nx,Infiltration,0\n",
    );
    let out = run(&[
        "audit",
        "--taxonomy",
        tax.to_str().unwrap(),
        "--actions",
        actions.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(stdout(&out).contains("any_incoherent=false"));
}

#[test]
fn audit_delegation_violation_exits_two() {
    let dir = TempDir::new().unwrap();
    let tax = write_file(&dir, "tax.csv", TAXONOMY);
    let actions = write_file(
        &dir,
        "actions.csv",
        "instance_id,node,action\nx,LungOpacity,D\nx,Edema,1\nx,Infiltration,0\n",
    );
    let out = run(&[
        "audit",
        "--taxonomy",
        tax.to_str().unwrap(),
        "--actions",
        actions.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let text = stdout(&out);
    assert!(text.contains("x,LungOpacity,Edema,delegation_violation"));
    assert!(text.contains("delegation=1"));
}

#[test]
fn audit_malformed_row_exits_one_with_line_number() {
    let dir = TempDir::new().unwrap();
    let tax = write_file(&dir, "tax.csv", TAXONOMY);
    let actions = write_file(
        &dir,
        "actions.csv",
        "instance_id,node,action\nx,LungOpacity,banana\n",
    );
    let out = run(&[
        "audit",
        "--taxonomy",
        tax.to_str().unwrap(),
        "--actions",
        actions.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn decode_project_is_always_coherent_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let tax = write_file(&dir, "tax.csv", TAXONOMY);
    let prims = write_file(
        &dir,
        "prims.csv",
        "instance_id,node,p0,p1,pd\n\
         a,LungOpacity,0.6,0.2,0.2\na,Edema,0.1,0.8,0.1\na,Infiltration,0.3,0.3,0.4\n\
         b,LungOpacity,0.2,0.3,0.5\nb,Edema,0.2,0.6,0.2\nb,Infiltration,0.7,0.2,0.1\n",
    );
    let args = [
        "decode",
        "--taxonomy",
        tax.to_str().unwrap(),
        "--primitives",
        prims.to_str().unwrap(),
        "--method",
        "project",
    ];
    let first = run(&args);
    assert_eq!(first.status.code(), Some(0));
    let second = run(&args);
    assert_eq!(first.stdout, second.stdout, "outputs must be byte-stable");
}

#[test]
fn decode_full_budget_defers_everything() {
    let dir = TempDir::new().unwrap();
    let tax = write_file(&dir, "tax.csv", TAXONOMY);
    let prims = write_file(
        &dir,
        "prims.csv",
        "instance_id,node,p0,p1,pd\nx,LungOpacity,0.5,0.3,0.2\nx,Edema,0.1,0.8,0.1\nx,Infiltration,0.2,0.2,0.6\n",
    );
    let out = run(&[
        "decode",
        "--taxonomy",
        tax.to_str().unwrap(),
        "--primitives",
        prims.to_str().unwrap(),
        "--method",
        "project",
        "--budget",
        "1.0",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    for line in text.lines().skip(1) {
        assert!(line.ends_with(",D"), "{line}");
    }
}

#[test]
fn decode_nodewise_reproduces_the_delegation_pattern() {
    // two-node chain with primitive rows proportional to (1-pi, pi, q)
    let dir = TempDir::new().unwrap();
    let tax = write_file(&dir, "tax.csv", "child,parent\nparent,ROOT\nchild,parent\n");
    // parent (.30,.70,.80)/1.8, child (.40,.60,.40)/1.4
    let prims = write_file(
        &dir,
        "prims.csv",
        "instance_id,node,p0,p1,pd\n\
         x,parent,0.16666666666666666,0.3888888888888889,0.4444444444444444\n\
         x,child,0.2857142857142857,0.42857142857142855,0.2857142857142857\n",
    );
    let out = run(&[
        "decode",
        "--taxonomy",
        tax.to_str().unwrap(),
        "--primitives",
        prims.to_str().unwrap(),
        "--method",
        "nodewise",
    ]);
    // incoherent output: deferred parent with an asserted-present child
    assert_eq!(out.status.code(), Some(2));
    let text = stdout(&out);
    assert!(text.contains("x,parent,D"));
    assert!(text.contains("x,child,1"));
}

#[test]
fn decode_bayes_needs_risks_and_uses_them() {
    let dir = TempDir::new().unwrap();
    let tax = write_file(&dir, "tax.csv", "child,parent\nparent,ROOT\nchild,parent\n");
    let out = run(&[
        "decode",
        "--taxonomy",
        tax.to_str().unwrap(),
        "--method",
        "bayes",
    ]);
    assert_eq!(out.status.code(), Some(1));

    // the option-value construction: committing the parent wins
    let risks = write_file(
        &dir,
        "risks.csv",
        "instance_id,node,r0,r1,rd\nx,parent,0.9,0.1,0.05\nx,child,0.9,0.1,0.45\n",
    );
    let out = run(&[
        "decode",
        "--taxonomy",
        tax.to_str().unwrap(),
        "--risks",
        risks.to_str().unwrap(),
        "--method",
        "bayes",
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = stdout(&out);
    assert!(text.contains("x,parent,1"));
    assert!(text.contains("x,child,1"));
}

#[test]
fn sweep_projection_has_zero_incoherence_auc() {
    let dir = TempDir::new().unwrap();
    let tax = write_file(&dir, "tax.csv", TAXONOMY);
    let prims = write_file(
        &dir,
        "prims.csv",
        "instance_id,node,p0,p1,pd\n\
         a,LungOpacity,0.6,0.2,0.2\na,Edema,0.1,0.8,0.1\na,Infiltration,0.3,0.3,0.4\n\
         b,LungOpacity,0.2,0.3,0.5\nb,Edema,0.2,0.6,0.2\nb,Infiltration,0.7,0.2,0.1\n",
    );
    let truth = write_file(
        &dir,
        "truth.csv",
        "instance_id,node,y\na,LungOpacity,1\na,Edema,1\na,Infiltration,0\n\
         b,LungOpacity,0\nb,Edema,0\nb,Infiltration,0\n",
    );
    let experts = write_file(
        &dir,
        "experts.csv",
        "instance_id,node,m\na,LungOpacity,1\na,Edema,0\na,Infiltration,0\n\
         b,LungOpacity,1\nb,Edema,1\nb,Infiltration,0\n",
    );
    let out = run(&[
        "sweep",
        "--taxonomy",
        tax.to_str().unwrap(),
        "--primitives",
        prims.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--expert-labels",
        experts.to_str().unwrap(),
        "--method",
        "project",
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = stdout(&out);
    assert!(text.contains("auc,,,edge_any,0\n"));
    assert!(text.contains("auc,,,neigh_any,0\n"));
    assert!(text.contains("closure,,,realised_raw_ratio,"));
}

#[test]
fn sweep_single_interval_keeps_only_the_endpoints() {
    let dir = TempDir::new().unwrap();
    let tax = write_file(&dir, "tax.csv", "child,parent\na,ROOT\nb,a\n");
    let prims = write_file(
        &dir,
        "prims.csv",
        "instance_id,node,p0,p1,pd\nx,a,0.5,0.3,0.2\nx,b,0.2,0.5,0.3\n",
    );
    let truth = write_file(&dir, "truth.csv", "instance_id,node,y\nx,a,1\nx,b,0\n");
    let experts = write_file(&dir, "experts.csv", "instance_id,node,m\nx,a,1\nx,b,0\n");
    let out = run(&[
        "sweep",
        "--taxonomy",
        tax.to_str().unwrap(),
        "--primitives",
        prims.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--expert-labels",
        experts.to_str().unwrap(),
        "--method",
        "nodewise",
        "--intervals",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = stdout(&out);
    let thresholds: std::collections::BTreeSet<&str> = text
        .lines()
        .filter(|l| l.starts_with("point,"))
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(thresholds.into_iter().collect::<Vec<_>>(), vec!["0", "2"]);
}

#[test]
fn gradcheck_passes_by_default() {
    let out = run(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(stdout(&out).contains("max relative error"));
}

#[test]
fn decode_output_round_trips_into_audit() {
    let dir = TempDir::new().unwrap();
    let tax = write_file(&dir, "tax.csv", TAXONOMY);
    let prims = write_file(
        &dir,
        "prims.csv",
        "instance_id,node,p0,p1,pd\nx,LungOpacity,0.2,0.5,0.3\nx,Edema,0.1,0.8,0.1\nx,Infiltration,0.6,0.2,0.2\n",
    );
    let decoded = dir.path().join("decoded.csv");
    let out = run(&[
        "decode",
        "--taxonomy",
        tax.to_str().unwrap(),
        "--primitives",
        prims.to_str().unwrap(),
        "--method",
        "tbp-exact",
        "--out",
        decoded.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let out = run(&[
        "audit",
        "--taxonomy",
        tax.to_str().unwrap(),
        "--actions",
        decoded.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn multi_expert_flags_flow_through() {
    let dir = TempDir::new().unwrap();
    let tax = write_file(&dir, "tax.csv", "child,parent\na,ROOT\nb,a\n");
    let prims = write_file(
        &dir,
        "prims.csv",
        "instance_id,node,p0,p1,pd1,pd2\nx,a,0.1,0.4,0.3,0.2\nx,b,0.2,0.3,0.1,0.4\n",
    );
    let out = run(&[
        "decode",
        "--taxonomy",
        tax.to_str().unwrap(),
        "--primitives",
        prims.to_str().unwrap(),
        "--method",
        "project",
        "--contract",
        "me",
        "--experts",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    // expert-indexed defer labels appear
    let text = stdout(&out);
    assert!(text.lines().skip(1).all(|l| {
        let action = l.rsplit(',').next().unwrap();
        ["0", "1", "D1", "D2"].contains(&action)
    }));
}
