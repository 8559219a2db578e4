const re = /[/"'`]/g;
const division = 4 / 2;
module.exports = { re, division };
