/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const cordic_error_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const max_abs_error: (a: number, b: number) => number;
export const pa_am_curves: (a: number, b: number) => [number, number];
export const quantizer_curve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
export const quantizer_range: (a: number, b: number, c: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
