mod common;

use std::path::Path;

use common::*;
use geodata::registry::{Registry, RegistryError};

fn write_source(root: &Path, dir: &str, entry: &str, handbook: &str) {
    let d = root.join("sources").join(dir);
    std::fs::create_dir_all(&d).unwrap();
    std::fs::write(d.join("entry.json"), entry).unwrap();
    std::fs::write(d.join("handbook.md"), handbook).unwrap();
    std::fs::write(d.join("runtime.txt"), "python\ndownload_data\n").unwrap();
}

#[test]
fn shipped_registry_has_the_seven_sources() {
    let reg = Registry::load(&registry_root()).unwrap();
    let order: Vec<&str> = reg.order().collect();
    assert_eq!(
        order,
        [
            "ESRI_world_imagery",
            "NYT_COVID",
            "OpenStreetMap",
            "OpenTopography",
            "OpenWeather",
            "US_Census_boundary",
            "US_Census_demography",
        ]
    );
    assert_eq!(
        reg.render_index().unwrap(),
        read(fixtures().join("golden/index_box1.txt"))
    );
}

#[test]
fn osm_handbook_is_the_eighteen_item_guide() {
    let reg = Registry::load(&registry_root()).unwrap();
    let hb = reg.resolve_handbook("OpenStreetMap").unwrap();
    assert_eq!(hb.guidelines.len(), 18);
    assert!(hb.guidelines[2].contains("area['SO3166-2'='US-PA']"));
    assert!(hb.guidelines[7].contains("out geom;"));
    assert!(hb
        .template_program
        .as_deref()
        .unwrap()
        .starts_with("Below is a program to download the province boundaries of Cuba."));
    assert_eq!(hb.reply_contract.entry_function, "download_data");
    assert!(matches!(
        reg.resolve_handbook("Unknown"),
        Err(RegistryError::UnknownAlias(_))
    ));
    assert!(matches!(
        reg.resolve_handbook("openstreetmap"),
        Err(RegistryError::UnknownAlias(_))
    ));
}

#[test]
fn keyed_sources_declare_their_placeholders() {
    let reg = Registry::load(&registry_root()).unwrap();
    for alias in ["OpenWeather", "OpenTopography", "US_Census_demography"] {
        let hb = reg.resolve_handbook(alias).unwrap();
        assert_eq!(hb.auth_placeholders.len(), 1, "{alias}");
        assert_eq!(hb.auth_placeholders[0].alias, alias);
    }
}

#[test]
fn empty_directory_loads_empty_registry() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::load(dir.path()).unwrap();
    assert_eq!(reg.len(), 0);
    assert!(matches!(
        reg.render_index(),
        Err(RegistryError::EmptyRegistry)
    ));
}

#[test]
fn duplicate_alias_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let entry = r#"{"alias": "osm", "display_name": "OSM", "description": "Map data."}"#;
    write_source(dir.path(), "one", entry, "1. Use Overpass.\n");
    write_source(dir.path(), "two", entry, "1. Use Overpass.\n");
    assert!(
        matches!(Registry::load(dir.path()), Err(RegistryError::DuplicateAlias(a)) if a == "osm")
    );
}

#[test]
fn manifest_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_source(
        dir.path(),
        "a",
        r#"{"alias": "a", "display_name": "A"}"#,
        "1. x\n",
    );
    assert!(matches!(
        Registry::load(dir.path()),
        Err(RegistryError::MalformedManifest { .. })
    ));

    let dir = tempfile::tempdir().unwrap();
    write_source(
        dir.path(),
        "a",
        r#"{"alias": "a", "display_name": "A", "description": "d", "auth_placeholders": ["{{KEY:a"]}"#,
        "1. x\n",
    );
    assert!(matches!(
        Registry::load(dir.path()),
        Err(RegistryError::MalformedManifest { .. })
    ));

    let dir = tempfile::tempdir().unwrap();
    write_source(
        dir.path(),
        "a",
        r#"{"alias": "a", "display_name": "A", "description": "d"}"#,
        "1. Append {{KEY:a:token}} to the URL.\n",
    );
    assert!(matches!(
        Registry::load(dir.path()),
        Err(RegistryError::MalformedManifest { .. })
    ));

    let dir = tempfile::tempdir().unwrap();
    write_source(
        dir.path(),
        "a",
        r#"{"alias": "a", "display_name": "A", "description": "d"}"#,
        "1. x\n",
    );
    std::fs::remove_file(dir.path().join("sources/a/handbook.md")).unwrap();
    assert!(matches!(
        Registry::load(dir.path()),
        Err(RegistryError::MissingHandbook(_))
    ));
}

#[test]
fn index_is_stable_and_registration_only_renumbers() {
    let reg = Registry::load(&registry_root()).unwrap();
    assert_eq!(reg.render_index().unwrap(), reg.render_index().unwrap());

    let dir = tempfile::tempdir().unwrap();
    write_source(
        dir.path(),
        "AAA_first",
        r#"{"alias": "AAA_first", "display_name": "Alpha", "description": "Sorts first."}"#,
        "1. x\n",
    );
    let extra = Registry::load(dir.path()).unwrap();
    let (e, h) = extra.entries().next().unwrap();
    let bigger = reg.register_source(e.clone(), h.clone()).unwrap();
    let strip = |s: String| -> Vec<String> {
        s.lines()
            .map(|l| l.split_once(". ").unwrap().1.to_string())
            .collect()
    };
    let before = strip(reg.render_index().unwrap());
    let after = strip(bigger.render_index().unwrap());
    assert_eq!(after.len(), before.len() + 1);
    assert!(before.iter().all(|l| after.contains(l)));
    for alias in reg.order() {
        assert_eq!(reg.entry(alias), bigger.entry(alias));
        assert_eq!(
            reg.resolve_handbook(alias).unwrap(),
            bigger.resolve_handbook(alias).unwrap()
        );
    }
}

#[test]
fn load_then_register_round_trip() {
    let loaded = Registry::load(&registry_root()).unwrap();
    let mut rebuilt = Registry::empty();
    for (e, h) in loaded.entries() {
        rebuilt = rebuilt.register_source(e.clone(), h.clone()).unwrap();
    }
    assert_eq!(
        rebuilt.render_index().unwrap(),
        loaded.render_index().unwrap()
    );
    for alias in loaded.order() {
        assert_eq!(
            rebuilt.resolve_handbook(alias).unwrap(),
            loaded.resolve_handbook(alias).unwrap()
        );
    }
}
