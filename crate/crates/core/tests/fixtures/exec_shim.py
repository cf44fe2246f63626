"""Minimal executing runner used as a test fixture for the sandbox."""
import json
import sys


def main():
    try:
        with open(sys.argv[1], encoding="utf-8") as f:
            request = json.load(f)
        code, tests = request["code"], request["test_list"]
    except Exception as exc:
        print(f"malformed request: {exc}", file=sys.stderr)
        return 2
    real_stdout = sys.stdout
    sys.stdout = sys.stderr

    def emit(i, status, error, test):
        real_stdout.write(json.dumps({"index": i, "status": status, "error": error[:2000], "test_case": test}) + "\n")
        real_stdout.flush()

    try:
        compiled = compile(code, "<candidate>", "exec")
    except SyntaxError as exc:
        for i, test in enumerate(tests, start=1):
            emit(i, "SYNTAX_ERROR", f"SyntaxError: {exc}", test)
        return 0
    namespace = {"__name__": "__candidate__"}
    try:
        exec(compiled, namespace)
    except BaseException as exc:
        for i, test in enumerate(tests, start=1):
            emit(i, "RUNTIME_ERROR", f"{type(exc).__name__}: {exc}", test)
        return 0
    for i, test in enumerate(tests, start=1):
        try:
            exec(compile(test, f"<test {i}>", "exec"), namespace)
        except AssertionError as exc:
            emit(i, "ASSERTION_FAILED", f"AssertionError: {exc}" if str(exc) else "AssertionError", test)
        except BaseException as exc:
            emit(i, "RUNTIME_ERROR", f"{type(exc).__name__}: {exc}", test)
        else:
            emit(i, "PASSED", "", test)
    return 0


if __name__ == "__main__":
    sys.exit(main())
