//! Builds and runs a small C client against the generated header and the
//! shared library. Skipped when no C compiler is available.

use std::path::PathBuf;
use std::process::Command;

const CLIENT: &str = r#"
#include <stdio.h>
#include <string.h>
#include "particle_dp.h"

int main(void) {
    const char *cfg =
        "[problem]\nstate_box = [[-3.0, 3.0]]\n"
        "[problem.dynamics]\nkind = \"linear\"\nf = [[1.0]]\nb = [[1.0]]\n"
        "[problem.cost]\nq = [[1.0]]\nr = [[1.0]]\n"
        "[problem.noise]\nkind = \"gaussian\"\ncov = [[0.5]]\n"
        "[problem.sampling]\nkind = \"uniform\"\n"
        "[problem.controls]\nkind = \"finite\"\nvalues = [[0.0], [1.0]]\n"
        "[solver]\nmode = \"finite\"\nhorizon = 1\nn_particles = 10\n";
    PdpSolution *sol = NULL;
    if (pdp_solve_config(cfg, 1, &sol) != PDP_STATUS_OK) {
        fprintf(stderr, "solve failed: %s\n", pdp_last_error_message());
        return 1;
    }
    size_t n = 0;
    pdp_solution_dims(sol, NULL, NULL, &n, NULL, NULL);
    double x = 0.0, value = -1.0;
    if (pdp_eval_value(sol, &x, 1, &value) != PDP_STATUS_OK) return 2;
    double far = 9.0;
    if (pdp_eval_value(sol, &far, 1, &value) != PDP_STATUS_OUTSIDE_STATE_SPACE) return 3;
    if (strlen(pdp_last_error_message()) == 0) return 4;
    printf("%zu %s\n", n, pdp_version());
    pdp_solution_free(sol);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test-binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_client_links_and_runs() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let lib_dir = target_dir();
    if !lib_dir.join("libparticle_dp_ffi.so").exists() {
        eprintln!("shared library not built at {}; skipping", lib_dir.display());
        return;
    }
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let work = tempfile::tempdir().unwrap();
    let src = work.path().join("client.c");
    let bin = work.path().join("client");
    std::fs::write(&src, CLIENT).unwrap();
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lparticle_dp_ffi")
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-o")
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C client failed to compile");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "client exited with {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.trim(), format!("10 {}", env!("CARGO_PKG_VERSION")));
}
