//! The external-solver file bridge: LP export, command invocation through
//! the shell, and solution-file parsing.

use std::fs;
use std::os::unix::fs::PermissionsExt;

use tokmix::bpe::{MergeList, MergeRule};
use tokmix::inference::lp::{parse_solution_file, write_lp_file, ExternalLpFile, LpBackend, LpBuilder};
use tokmix::inference::ConstraintRef;
use tokmix::pretokenize::WordTable;
use tokmix::timeline::replay;

fn toy_lp() -> (MergeList, LpBuilder) {
    let mut cat0 = WordTable::new();
    cat0.add_word(b"ab", 10);
    cat0.add_word(b"cd", 2);
    let mut cat1 = WordTable::new();
    cat1.add_word(b"cd", 9);
    let mut merges = MergeList::new_byte_level();
    merges.push_rule(&MergeRule::new(*b"a", *b"b")).unwrap();
    merges.push_rule(&MergeRule::new(*b"c", *b"d")).unwrap();
    let mut tl0 = replay(&cat0, &merges, 2).unwrap();
    tl0.category_id = 0;
    tl0.norm_denominator = 20;
    let mut tl1 = replay(&cat1, &merges, 2).unwrap();
    tl1.category_id = 1;
    tl1.norm_denominator = 20;
    let mut builder = LpBuilder::new(2);
    builder
        .add_constraints(
            &[ConstraintRef {
                t: 0,
                pair: (b'c' as u32, b'd' as u32),
            }],
            &[tl0, tl1],
            &merges,
        )
        .unwrap();
    (merges, builder)
}

#[test]
fn lp_file_has_the_expected_shape() {
    let (_, builder) = toy_lp();
    let mut text = String::new();
    write_lp_file(builder.instance(), &mut text).unwrap();
    assert!(text.starts_with("\\ tokmix"), "{text}");
    assert!(text.contains("Minimize"), "{text}");
    assert!(text.contains("obj: + vt_0 + vp_99_100"), "{text}");
    assert!(text.contains("Subject To"), "{text}");
    assert!(text.contains("simplex:"), "{text}");
    assert!(text.contains("c_0_99_100:"), "{text}");
    assert!(text.contains("= 1"), "{text}");
    assert!(text.contains("Bounds"), "{text}");
    assert!(text.contains("0 <= a_0 <= 1"), "{text}");
    assert!(text.trim_end().ends_with("End"), "{text}");
}

#[test]
fn solution_files_parse_by_variable_name() {
    let (_, builder) = toy_lp();
    let sol = parse_solution_file(
        "# comment\na_0 0.75\na_1 0.25\nvt_0 0.0125\nvp_99_100 0\n",
        builder.instance(),
    )
    .unwrap();
    assert_eq!(sol.alpha, vec![0.75, 0.25]);
    assert!((sol.objective - 0.0125).abs() < 1e-12);
    assert_eq!(sol.v_step[&0], 0.0125);

    // Unassigned slacks default to zero; garbage lines are errors.
    let sol = parse_solution_file("a_0 1\na_1 0\n", builder.instance()).unwrap();
    assert_eq!(sol.objective, 0.0);
    assert!(parse_solution_file("a_0\n", builder.instance()).is_err());
    assert!(parse_solution_file("a_0 zebra\n", builder.instance()).is_err());
    assert!(parse_solution_file("", builder.instance()).is_err());
}

#[test]
fn external_backend_round_trips_through_a_scripted_solver() {
    let (_, builder) = toy_lp();
    let dir = tempfile::tempdir().unwrap();
    // The "solver": checks the LP landed on disk, then emits a known
    // optimum of the toy instance (alpha_0 >= 9/17 makes the row slack).
    let script = dir.path().join("fake_solver.sh");
    fs::write(
        &script,
        "#!/bin/sh\nset -e\ngrep -q 'Minimize' \"$1\"\ngrep -q 'simplex:' \"$1\"\n\
         printf 'a_0 0.8\\na_1 0.2\\nvt_0 0\\nvp_99_100 0\\n' > \"$2\"\n",
    )
    .unwrap();
    fs::set_permissions(&script, fs::Permissions::from_mode(0o755)).unwrap();

    let backend = ExternalLpFile::new(format!("{} {{lp}} {{sol}}", script.display()));
    let sol = backend.solve(builder.instance()).unwrap();
    assert_eq!(sol.alpha, vec![0.8, 0.2]);
    assert_eq!(sol.objective, 0.0);
}

#[test]
fn external_backend_surfaces_failures() {
    let (_, builder) = toy_lp();
    let missing = ExternalLpFile::new("/nonexistent/solver {lp} {sol}".to_string());
    assert!(missing.solve(builder.instance()).is_err());

    let failing = ExternalLpFile::new("false".to_string());
    let err = failing.solve(builder.instance()).unwrap_err();
    assert!(matches!(err, tokmix::error::Error::Backend(_)), "{err}");

    // Exits zero but never writes the solution file.
    let silent = ExternalLpFile::new("true".to_string());
    let err = silent.solve(builder.instance()).unwrap_err();
    assert!(err.to_string().contains("no solution file"), "{err}");
}
