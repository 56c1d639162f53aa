/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const compile_program: (a: number, b: number) => [number, number];
export const leakcheck_program: (a: number, b: number, c: bigint, d: bigint) => [number, number];
export const trace_program: (a: number, b: number, c: bigint, d: bigint) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
