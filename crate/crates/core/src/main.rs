fn main() {
    std::process::exit(amsdb::cli::run(std::env::args_os()));
}
