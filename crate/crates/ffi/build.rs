fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    // write_to_file leaves an up-to-date header untouched, so rebuilding
    // does not dirty the tree.
    cbindgen::generate(&crate_dir)
        .expect("header generation failed")
        .write_to_file(format!("{crate_dir}/include/fingercascade.h"));
}
