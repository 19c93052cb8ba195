pub mod checks;
pub mod gen;
pub mod oracle;
