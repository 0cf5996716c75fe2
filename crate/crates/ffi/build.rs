use std::path::PathBuf;

use cbindgen::{Builder, Config, EnumConfig, Language, RenameRule};

const HEADER_FILE: &str = "include/generichub.h";

fn main() {
    let crate_dir = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").unwrap());
    println!("cargo:rerun-if-changed=src/lib.rs");

    let mut config = Config {
        language: Language::C,
        cpp_compat: true,
        include_guard: Some("GENERICHUB_H".into()),
        documentation: true,
        ..Config::default()
    };
    config.enumeration = EnumConfig {
        rename_variants: RenameRule::QualifiedScreamingSnakeCase,
        ..EnumConfig::default()
    };

    let bindings = Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("unable to generate C bindings");
    std::fs::create_dir_all(crate_dir.join("include")).unwrap();
    bindings.write_to_file(crate_dir.join(HEADER_FILE));
}
