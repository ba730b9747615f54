/// Version tag of [`LIBC_FUNCTIONS`]; bump when the list changes.
pub const LIBC_NAMES_VERSION: &str = "c11-2024.1";

/// Functions declared by the C11 standard library headers, sorted.
const LIBC_FUNCTIONS: &[&str] = &[
    "_Exit", "abort", "abs", "acos", "acosf", "acosh", "acoshf", "acoshl", "acosl", "aligned_alloc",
    "asctime", "asin", "asinf", "asinh", "asinhf", "asinhl", "asinl", "assert", "at_quick_exit",
    "atan", "atan2", "atan2f", "atan2l", "atanf", "atanh", "atanhf", "atanhl", "atanl", "atexit",
    "atof", "atoi", "atol", "atoll", "bsearch", "btowc", "cabs", "cacos", "calloc", "carg", "casin",
    "catan", "cbrt", "cbrtf", "cbrtl", "ccos", "ceil", "ceilf", "ceill", "cexp", "cimag", "clearerr",
    "clock", "clog", "conj", "copysign", "copysignf", "copysignl", "cos", "cosf", "cosh", "coshf",
    "coshl", "cosl", "cpow", "cproj", "creal", "csin", "csqrt", "ctan", "ctime", "difftime", "div",
    "erf", "erfc", "erfcf", "erfcl", "erff", "erfl", "exit", "exp", "exp2", "exp2f", "exp2l", "expf",
    "expl", "expm1", "expm1f", "expm1l", "fabs", "fabsf", "fabsl", "fclose", "fdim", "feclearexcept",
    "fegetenv", "fegetround", "feof", "feraiseexcept", "ferror", "fesetenv", "fesetround",
    "fetestexcept", "fflush", "fgetc", "fgetpos", "fgets", "fgetwc", "fgetws", "floor", "floorf",
    "floorl", "fma", "fmaf", "fmal", "fmax", "fmaxf", "fmaxl", "fmin", "fminf", "fminl", "fmod",
    "fmodf", "fmodl", "fopen", "fprintf", "fputc", "fputs", "fputwc", "fputws", "fread", "free",
    "freopen", "frexp", "fscanf", "fseek", "fsetpos", "ftell", "fwide", "fwprintf", "fwrite",
    "fwscanf", "getc", "getchar", "getenv", "gets", "getwc", "getwchar", "gmtime", "hypot", "ilogb",
    "imaxabs", "imaxdiv", "isalnum", "isalpha", "isblank", "iscntrl", "isdigit", "isgraph",
    "islower", "isprint", "ispunct", "isspace", "isupper", "iswalnum", "iswalpha", "iswblank",
    "iswcntrl", "iswctype", "iswdigit", "iswgraph", "iswlower", "iswprint", "iswpunct", "iswspace",
    "iswupper", "iswxdigit", "isxdigit", "labs", "ldexp", "ldiv", "lgamma", "llabs", "lldiv",
    "llrint", "llround", "localeconv", "localtime", "log", "log10", "log10f", "log10l", "log1p",
    "log1pf", "log1pl", "log2", "log2f", "log2l", "logb", "logf", "logl", "longjmp", "lrint",
    "lround", "malloc", "mblen", "mbrlen", "mbrtowc", "mbsinit", "mbsrtowcs", "mbstowcs", "mbtowc",
    "memchr", "memcmp", "memcpy", "memmove", "memset", "mktime", "modf", "nan", "nearbyint",
    "nextafter", "nexttoward", "perror", "pow", "powf", "powl", "printf", "putc", "putchar", "puts",
    "putwc", "putwchar", "qsort", "quick_exit", "raise", "rand", "realloc", "remainder", "remove",
    "remquo", "rename", "rewind", "rint", "round", "scalbln", "scalbn", "scanf", "setbuf", "setjmp",
    "setlocale", "setvbuf", "signal", "sin", "sinf", "sinh", "sinhf", "sinhl", "sinl", "snprintf",
    "sprintf", "sqrt", "sqrtf", "sqrtl", "srand", "sscanf", "strcat", "strchr", "strcmp", "strcoll",
    "strcpy", "strcspn", "strerror", "strftime", "strlen", "strncat", "strncmp", "strncpy",
    "strpbrk", "strrchr", "strspn", "strstr", "strtod", "strtof", "strtoimax", "strtok", "strtol",
    "strtold", "strtoll", "strtoul", "strtoull", "strtoumax", "strxfrm", "swprintf", "swscanf",
    "system", "tan", "tanf", "tanh", "tanhf", "tanhl", "tanl", "tgamma", "time", "timespec_get",
    "tmpfile", "tmpnam", "tolower", "toupper", "towctrans", "towlower", "towupper", "trunc",
    "ungetc", "ungetwc", "va_arg", "va_copy", "va_end", "va_start", "vfprintf", "vfscanf",
    "vfwprintf", "vfwscanf", "vprintf", "vscanf", "vsnprintf", "vsprintf", "vsscanf", "vswprintf",
    "vswscanf", "vwprintf", "vwscanf", "wcrtomb", "wcscat", "wcschr", "wcscmp", "wcscoll",
    "wcscpy", "wcscspn", "wcsftime", "wcslen", "wcsncat", "wcsncmp", "wcsncpy", "wcspbrk",
    "wcsrchr", "wcsrtombs", "wcsspn", "wcsstr", "wcstod", "wcstof", "wcstok", "wcstol", "wcstold",
    "wcstoll", "wcstombs", "wcstoul", "wcstoull", "wctob", "wctomb", "wctrans", "wctype", "wmemchr",
    "wmemcmp", "wmemcpy", "wmemmove", "wmemset", "wprintf", "wscanf",
];

pub fn is_libc_function(name: &str) -> bool {
    LIBC_FUNCTIONS.binary_search(&name).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_is_sorted_and_unique() {
        assert!(LIBC_FUNCTIONS.windows(2).all(|w| w[0] < w[1]), "list must stay sorted for binary search");
    }

    #[test]
    fn lookup() {
        assert!(is_libc_function("memcpy"));
        assert!(is_libc_function("strlen"));
        assert!(!is_libc_function("helper"));
        assert!(!is_libc_function("hrtimer_forward"));
    }
}
