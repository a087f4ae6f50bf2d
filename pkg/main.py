import multiprocessing as mp

from erv_mixture.cli import app

if __name__ == "__main__":
    mp.set_start_method("spawn", force=True)
    app()
