fn main() {
    std::process::exit(sph3d::cli::main_with_args(std::env::args_os()));
}
