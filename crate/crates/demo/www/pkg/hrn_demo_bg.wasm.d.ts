/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_basisdemo_free: (a: number, b: number) => void;
export const __wbg_routedemo_free: (a: number, b: number) => void;
export const basisdemo_feed: (a: number, b: number) => [number, number];
export const basisdemo_new: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const basisdemo_set_cluster: (a: number, b: number) => [number, number];
export const basisdemo_state: (a: number) => [number, number];
export const hash_explorer: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const preset: (a: number, b: number) => [number, number];
export const routedemo_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const routedemo_route: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const routedemo_summary: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
