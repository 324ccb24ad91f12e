"""
Setup script for the news trustworthiness report pipeline.

Checks the interpreter, creates working directories, installs the pinned
requirements and indexes the bundled sample corpus.
"""
import os
import subprocess
import sys


def run_command(command, description):
    """Run a command and report the outcome"""
    print(f"🔄 {description}...")
    try:
        result = subprocess.run(command, capture_output=True, text=True)
    except OSError as e:
        print(f"❌ Error: {e}")
        return False
    if result.returncode == 0:
        print(f"✅ {description} completed successfully")
        return True
    print(f"❌ Error: {result.stderr.strip() or result.stdout.strip()}")
    return False


def setup_pipeline():
    print("📰 NEWS TRUSTWORTHINESS REPORT PIPELINE SETUP")
    print("=" * 60)

    python_version = sys.version_info
    print(f"🐍 Python version: {python_version.major}.{python_version.minor}.{python_version.micro}")
    if python_version < (3, 9):
        print("❌ Python 3.9 or higher is required")
        return False

    print("\n📁 Creating directories...")
    for directory in ["data", "index", "results"]:
        os.makedirs(directory, exist_ok=True)
        print(f"✅ Created {directory}/")

    print("\n📦 Installing dependencies...")
    if not run_command([sys.executable, "-m", "pip", "install", "-r", "requirements.txt"],
                       "Installing requirements.txt"):
        print("⚠️  Warning: dependency installation failed")
        return False

    print("\n📚 Indexing the sample corpus...")
    if not run_command([sys.executable, "main.py", "index"], "Indexing data/sample/corpus.jsonl"):
        print("\n❌ Setup encountered errors. Please check the output above.")
        return False

    print("\n🎉 SETUP COMPLETED SUCCESSFULLY!")
    print("\n🚀 Next steps:")
    print("  1. Run the offline pipeline: python main.py full --all-strategies")
    print("  2. Try a search: python main.py search -q \"who funds the fluoride study\"")
    print("  3. Run the tests: pytest")
    print("  4. For live models put OPENAI_API_KEY in .env and pass --backend live")
    return True


if __name__ == "__main__":
    sys.exit(0 if setup_pipeline() else 1)
