use std::mem::{offset_of, size_of};
use std::path::{Path, PathBuf};
use std::process::Command;

use sparsepose_ffi::*;

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn header() -> String {
    std::fs::read_to_string(manifest_dir().join("include/sparsepose.h")).expect("generated header")
}

fn exported_functions() -> Vec<String> {
    let src = std::fs::read_to_string(manifest_dir().join("src/lib.rs")).unwrap();
    src.lines()
        .filter_map(|l| {
            let l = l.trim_start();
            let rest = l
                .strip_prefix("pub unsafe extern \"C\" fn ")
                .or_else(|| l.strip_prefix("pub extern \"C\" fn "))?;
            Some(rest.split('(').next().unwrap().to_string())
        })
        .collect()
}

#[test]
fn header_declares_every_export() {
    let h = header();
    let fns = exported_functions();
    assert!(fns.len() >= 12, "found only {fns:?}");
    for f in fns {
        assert!(h.contains(&format!("{f}(")), "header lacks {f}");
    }
    for opaque in ["typedef struct SpEngine SpEngine;", "typedef struct SpAssembler SpAssembler;"] {
        assert!(h.contains(opaque), "{opaque}");
    }
}

#[test]
fn status_codes_match() {
    let h = header();
    let codes = [
        ("SP_STATUS_OK", SpStatus::Ok),
        ("SP_STATUS_NULL", SpStatus::Null),
        ("SP_STATUS_PARSE", SpStatus::Parse),
        ("SP_STATUS_DEGENERATE", SpStatus::Degenerate),
        ("SP_STATUS_CALIBRATION", SpStatus::Calibration),
        ("SP_STATUS_INVALID_ARGUMENT", SpStatus::InvalidArgument),
        ("SP_STATUS_IO", SpStatus::Io),
        ("SP_STATUS_PANIC", SpStatus::Panic),
    ];
    for (name, code) in codes {
        assert!(h.contains(&format!("{name} = {},", code as i32)), "{name}");
    }
    for (name, v) in [("SP_INPUT_DIM", 135), ("SP_POSE_DIM", 132), ("SP_SHAPE_DIM", 16)] {
        assert!(h.contains(&format!("#define {name} {v}")), "{name}");
    }
}

fn compiler() -> Option<&'static str> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
}

const LAYOUT_PROGRAM: &str = r#"
#include <stddef.h>
#include <stdio.h>
#include "sparsepose.h"
#define P(e) printf("%zu\n", (size_t)(e))
int main(void) {
    P(sizeof(SpPoseOutput)); P(offsetof(SpPoseOutput, beta)); P(offsetof(SpPoseOutput, joint_positions));
    P(offsetof(SpPoseOutput, global_rotations));
    P(sizeof(SpDevicePose)); P(offsetof(SpDevicePose, rotation)); P(offsetof(SpDevicePose, timestamp));
    P(sizeof(SpImuSample)); P(offsetof(SpImuSample, rotation)); P(offsetof(SpImuSample, acceleration));
    P(offsetof(SpImuSample, timestamp));
    P(sizeof(SpSensorFrame)); P(offsetof(SpSensorFrame, pelvis)); P(offsetof(SpSensorFrame, right_leg));
    P(sizeof(SpStatus));
    return 0;
}
"#;

fn compile_and_run(cc: &str, dir: &Path) -> Vec<usize> {
    let src = dir.join("layout.c");
    let exe = dir.join("layout");
    std::fs::write(&src, LAYOUT_PROGRAM).unwrap();
    let out = Command::new(cc)
        .args(["-std=c11", "-Wall", "-Wextra", "-Werror", "-I"])
        .arg(manifest_dir().join("include"))
        .arg(&src)
        .arg("-o")
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success());
    String::from_utf8(run.stdout)
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect()
}

#[test]
fn c_layout_matches_rust() {
    let Some(cc) = compiler() else {
        println!("no C compiler found; layout check skipped");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let got = compile_and_run(cc, dir.path());
    let want = vec![
        size_of::<SpPoseOutput>(),
        offset_of!(SpPoseOutput, beta),
        offset_of!(SpPoseOutput, joint_positions),
        offset_of!(SpPoseOutput, global_rotations),
        size_of::<SpDevicePose>(),
        offset_of!(SpDevicePose, rotation),
        offset_of!(SpDevicePose, timestamp),
        size_of::<SpImuSample>(),
        offset_of!(SpImuSample, rotation),
        offset_of!(SpImuSample, acceleration),
        offset_of!(SpImuSample, timestamp),
        size_of::<SpSensorFrame>(),
        offset_of!(SpSensorFrame, pelvis),
        offset_of!(SpSensorFrame, right_leg),
        size_of::<SpStatus>(),
    ];
    assert_eq!(got, want);
}

#[test]
fn header_is_valid_cpp() {
    let Some(cxx) = ["c++", "g++", "clang++"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
    else {
        println!("no C++ compiler found; check skipped");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("h.cpp");
    std::fs::write(&src, "#include \"sparsepose.h\"\nint main() { SpStatus s = SP_STATUS_OK; return (int)s; }\n").unwrap();
    let out = Command::new(cxx)
        .args(["-std=c++11", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(manifest_dir().join("include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
