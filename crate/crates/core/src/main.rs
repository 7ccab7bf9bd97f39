fn main() {
    std::process::exit(mrc_denoise::cli::run(std::env::args_os()));
}
