mod common;

use std::time::{Duration, Instant};

use common::{exec_sandbox, stub_sandbox};
use feedback_harness::sandbox::{first_failure, SandboxError, TestStatus};

const FIRST_REPEATED: &str = "def first_repeated_char(s):
    seen = set()
    for char in s:
        if char in seen:
            return char
        seen.add(char)
    return \"None\"";

fn repeated_tests() -> Vec<String> {
    vec![
        r#"assert first_repeated_char("abcabc") == "a""#.into(),
        r#"assert first_repeated_char("abc") == "None""#.into(),
        r#"assert first_repeated_char("123123") == "1""#.into(),
    ]
}

fn statuses(report: &feedback_harness::ExecutionReport) -> Vec<TestStatus> {
    report.outcomes.iter().map(|o| o.status).collect()
}

#[test]
fn reference_solution_passes_all() {
    let report = exec_sandbox()
        .execute(FIRST_REPEATED, &repeated_tests(), "frc", Duration::from_secs(30))
        .unwrap();
    assert!(report.passed);
    assert_eq!(statuses(&report), vec![TestStatus::Passed; 3]);
    assert!(report.outcomes.iter().all(|o| o.error.is_empty()));
}

#[test]
fn buggy_variant_fails_only_the_no_repeat_case() {
    // Returns the last character instead of "None" when nothing repeats.
    let buggy = FIRST_REPEATED.replace("return \"None\"", "return s[-1]");
    let report = exec_sandbox()
        .execute(&buggy, &repeated_tests(), "frc", Duration::from_secs(30))
        .unwrap();
    assert!(!report.passed);
    assert_eq!(
        statuses(&report),
        vec![TestStatus::Passed, TestStatus::AssertionFailed, TestStatus::Passed]
    );
    let failed = first_failure(&report).unwrap();
    assert_eq!(failed.index, 2);
    assert_eq!(failed.test_case, repeated_tests()[1]);
}

#[test]
fn compile_error_marks_every_test() {
    let report = exec_sandbox()
        .execute("def f(:", &repeated_tests(), "bad", Duration::from_secs(30))
        .unwrap();
    assert_eq!(statuses(&report), vec![TestStatus::SyntaxError; 3]);
    assert!(report.outcomes[0].error.starts_with("SyntaxError"));
}

#[test]
fn runtime_error_in_middle_test_does_not_stop_later_tests() {
    let code = "def f(x):\n    return {1: 1, 3: 3}[x]";
    let tests: Vec<String> = (1..=3).map(|i| format!("assert f({i}) == {i}")).collect();
    let report = exec_sandbox().execute(code, &tests, "kv", Duration::from_secs(30)).unwrap();
    assert_eq!(
        statuses(&report),
        vec![TestStatus::Passed, TestStatus::RuntimeError, TestStatus::Passed]
    );
    assert!(report.outcomes[1].error.starts_with("KeyError"));
}

#[test]
fn infinite_loop_times_out_within_grace() {
    let code = "def spin(x):\n    while True:\n        pass";
    let tests: Vec<String> = vec!["assert spin(1)".into(), "assert spin(2)".into()];
    let start = Instant::now();
    let report = exec_sandbox().execute(code, &tests, "spin", Duration::from_secs(2)).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(statuses(&report), vec![TestStatus::Timeout; 2]);
    assert!(report.wall_time >= 2.0 && report.wall_time <= 4.0, "wall_time {}", report.wall_time);
    assert!(elapsed <= 4.0, "elapsed {elapsed}");
}

#[test]
fn stub_timeout_marks_unreported_tests() {
    let tests: Vec<String> = vec!["assert a()".into(), "assert b()".into(), "assert c()".into()];
    // Emits nothing until after the deadline.
    let report = stub_sandbox()
        .execute("#!stub sleep 5", &tests, "slow", Duration::from_millis(500))
        .unwrap();
    assert_eq!(statuses(&report), vec![TestStatus::Timeout; 3]);
    assert!(report.outcomes[0].error.contains("Timeout"));
    assert!(report.wall_time < 0.5 + 2.0);
}

#[test]
fn nonzero_exit_without_output_is_harness_error() {
    let tests: Vec<String> = vec!["assert a()".into(), "assert b()".into()];
    let report = stub_sandbox()
        .execute("#!stub emit 0\n#!stub exit 3", &tests, "x", Duration::from_secs(10))
        .unwrap();
    assert_eq!(statuses(&report), vec![TestStatus::HarnessError; 2]);
    assert!(report.outcomes[0].error.contains("exit"));

    let partial = stub_sandbox()
        .execute("#!stub emit 1\n#!stub exit 1", &tests, "x", Duration::from_secs(10))
        .unwrap();
    assert_eq!(statuses(&partial), vec![TestStatus::Passed, TestStatus::HarnessError]);
}

#[test]
fn clean_exit_with_missing_lines_is_protocol_violation() {
    let tests: Vec<String> = vec!["assert a()".into(), "assert b()".into()];
    let err = stub_sandbox()
        .execute("#!stub emit 1", &tests, "x", Duration::from_secs(10))
        .unwrap_err();
    assert!(matches!(err, SandboxError::ProtocolViolation(_)));
    let err = stub_sandbox()
        .execute("#!stub garbage", &tests, "x", Duration::from_secs(10))
        .unwrap_err();
    assert!(matches!(err, SandboxError::ProtocolViolation(_)));
}

#[test]
fn each_execution_gets_a_fresh_directory() {
    let tests: Vec<String> = vec!["assert a()".into()];
    let sandbox = stub_sandbox();
    for _ in 0..3 {
        let report = sandbox.execute("#!stub fresh_dir", &tests, "iso", Duration::from_secs(10)).unwrap();
        assert!(report.passed, "{:?}", report.outcomes);
    }
}

#[test]
fn repeated_execution_is_status_identical() {
    let tests = repeated_tests();
    let buggy = FIRST_REPEATED.replace("return \"None\"", "return None");
    let a = exec_sandbox().execute(&buggy, &tests, "d", Duration::from_secs(30)).unwrap();
    let b = exec_sandbox().execute(&buggy, &tests, "d", Duration::from_secs(30)).unwrap();
    assert_eq!(a.outcomes, b.outcomes);
}

#[test]
fn probe_handshake() {
    stub_sandbox().probe().unwrap();
    exec_sandbox().probe().unwrap();
    let broken = feedback_harness::Sandbox::new(feedback_harness::SandboxConfig {
        interpreter: "python3".into(),
        shim: common::fixture("fixtures/does_not_exist.py"),
        kill_grace_secs: 1.0,
    });
    assert!(matches!(broken.probe(), Err(SandboxError::Handshake(_))));
}

/// The few-shot solutions in both generation templates pass the asserts
/// listed next to them.
#[test]
fn template_examples_pass_their_own_tests() {
    use feedback_harness::prompts::{InstructionVariant, PromptTemplateSet};
    let sandbox = common::exec_sandbox();
    for variant in [InstructionVariant::Bangla, InstructionVariant::English] {
        let system = PromptTemplateSet::builtin().generation_system(variant);
        let examples: Vec<&str> = system.split("Test Cases:\n").skip(1).collect();
        assert_eq!(examples.len(), 2);
        for example in examples {
            let (tests, rest) = example.split_once("\n\nExpected Solution:\n").unwrap();
            let tests: Vec<String> = tests.lines().map(str::to_string).collect();
            let code = feedback_harness::extract_code_block(rest).unwrap();
            let report = sandbox.execute(&code, &tests, "example", Duration::from_secs(10)).unwrap();
            assert!(report.passed, "{variant}: {:?}", report.outcomes);
        }
    }
}
