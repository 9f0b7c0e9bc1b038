fn main() {
    // System LAPACK/BLAS (on Debian-style systems the alternatives mechanism
    // points these at OpenBLAS when it is installed).
    println!("cargo:rustc-link-lib=dylib=lapack");
    println!("cargo:rustc-link-lib=dylib=blas");
}
